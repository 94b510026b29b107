//! Meta-training and the pretraining baseline on one fold's training split.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use metashape_core::clock::MonotonicClock;
use metashape_core::meta::{self, EpochRecord, MetaState};
use metashape_core::volume::VolumeGrid;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::split;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Meta,
    Pretrain,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Meta => "meta",
            TrainMode::Pretrain => "pretrain",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        match s {
            "meta" => Some(TrainMode::Meta),
            "pretrain" => Some(TrainMode::Pretrain),
            _ => None,
        }
    }
}

/// Name of the file recording the training family of a fold directory.
pub const FAMILY_FILE: &str = "family.txt";

/// Files written by a training run under `<out>/fold<k>/`.
pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold{fold}"))
}

pub fn checkpoint_path(out: &Path, fold: usize, mode: TrainMode) -> PathBuf {
    fold_dir(out, fold).join(format!("{}.ckpt", mode.name()))
}

pub fn log_path(out: &Path, fold: usize, mode: TrainMode) -> PathBuf {
    fold_dir(out, fold).join(format!("{}_log.csv", mode.name()))
}

pub fn train_ids_path(out: &Path, fold: usize, mode: TrainMode) -> PathBuf {
    fold_dir(out, fold).join(format!("{}_train_ids.txt", mode.name()))
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("config.ini");
    fs::write(&path, cfg.to_ini_string()).map_err(|e| CliError::io(&path, e))
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "outer_loss", "wall_seconds"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.outer_loss.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads back the ids a training run was given.
pub fn read_train_ids(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| CliError::config(format!("{}: bad id `{l}`", path.display())))
        })
        .collect()
}

/// Trains on fold `fold`'s training split and writes the checkpoint, the
/// per-epoch log, the list of training ids and the configuration.
pub fn cmd_train(
    data: &Dataset,
    fold: usize,
    mode: TrainMode,
    cfg: &ExperimentConfig,
    out: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<PathBuf> {
    let ids = data.manifest.ids();
    let split = split::fold(&ids, cfg.bench.folds, cfg.bench.split_seed, fold)?;
    let dir = fold_dir(out, fold);
    write_config(&dir, cfg)?;
    let fam_path = dir.join(FAMILY_FILE);
    fs::write(&fam_path, data.family().name()).map_err(|e| CliError::io(&fam_path, e))?;
    let ids_path = train_ids_path(out, fold, mode);
    let mut f = fs::File::create(&ids_path).map_err(|e| CliError::io(&ids_path, e))?;
    for id in &split.train {
        writeln!(f, "{id}").map_err(|e| CliError::io(&ids_path, e))?;
    }
    let shapes: Vec<VolumeGrid> = split
        .train
        .iter()
        .map(|&id| data.grid(id).cloned())
        .collect::<Result<_>>()?;
    let clock = MonotonicClock::start();
    let log_file = log_path(out, fold, mode);
    let ckpt = checkpoint_path(out, fold, mode);
    let state = match mode {
        TrainMode::Meta => {
            match meta::meta_train(&shapes, &cfg.sampler, &cfg.meta, &clock, &mut |r, _| {
                progress(r)
            }) {
                Ok(o) => {
                    write_log(&log_file, &o.log)?;
                    o.state
                }
                Err(f) => {
                    write_log(&log_file, &f.log)?;
                    return Err(f.error.into());
                }
            }
        }
        TrainMode::Pretrain => {
            match meta::pretrain_baseline(&shapes, &cfg.sampler, &cfg.meta, &clock, &mut |r, _| {
                progress(r)
            }) {
                Ok(o) => {
                    write_log(&log_file, &o.log)?;
                    let mut s = MetaState::new(cfg.meta.net, o.state, cfg.meta.alpha0);
                    s.epoch = o.log.len() as u32;
                    s
                }
                Err(f) => {
                    write_log(&log_file, &f.log)?;
                    return Err(f.error.into());
                }
            }
        }
    };
    checkpoint::save(&ckpt, &state)?;
    Ok(ckpt)
}
