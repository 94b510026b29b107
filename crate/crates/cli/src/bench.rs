//! Reconstruction sweeps over test shapes, transfer sweeps and the summary
//! tables built from their rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use metashape_core::clock::MonotonicClock;
use metashape_core::recon::{self, AdaptConfig, GridGeometry, ReconResult, UpdateRule};
use metashape_core::shapes::Family;
use metashape_core::siren;
use metashape_core::tensor::ParamVector;
use metashape_core::volume::{sample_slices, Axis, VolumeGrid};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::{ExperimentConfig, InitKind};
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::mvol;
use crate::split;
use crate::train::{self, TrainMode};

/// An initialization to adapt from.
#[derive(Clone, Debug)]
pub struct Prior {
    pub init: InitKind,
    pub params: ParamVector,
    /// Per-parameter inner step sizes; `None` adapts with Adam.
    pub alpha: Option<ParamVector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepLabel {
    At(usize),
    /// The early-stopping step.
    Conv,
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepLabel::At(s) => write!(f, "{s}"),
            StepLabel::Conv => f.write_str("conv"),
        }
    }
}

impl std::str::FromStr for StepLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "conv" => Ok(StepLabel::Conv),
            n => n
                .parse()
                .map(StepLabel::At)
                .map_err(|_| format!("bad step `{s}`")),
        }
    }
}

/// Outcome of a steps-to-target search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Iters {
    Reached(usize),
    /// Not reached within the given cap.
    Beyond(usize),
}

impl fmt::Display for Iters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Iters::Reached(s) => write!(f, "{s}"),
            Iters::Beyond(m) => write!(f, ">{m}"),
        }
    }
}

impl std::str::FromStr for Iters {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = |_| format!("bad iteration count `{s}`");
        match s.strip_prefix('>') {
            Some(m) => m.parse().map(Iters::Beyond).map_err(bad),
            None => s.parse().map(Iters::Reached).map_err(bad),
        }
    }
}

/// One reconstruction evaluated at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub init: InitKind,
    pub family_train: Family,
    pub family_eval: Family,
    pub fold: usize,
    pub shape_id: usize,
    pub axis: Axis,
    pub w: usize,
    pub step: StepLabel,
    pub dsc: f64,
    pub asd_mm: Option<f64>,
    pub context_loss: f64,
    pub wall_seconds: f64,
}

/// Per-reconstruction facts that are not tied to a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub init: InitKind,
    pub family_train: Family,
    pub family_eval: Family,
    pub fold: usize,
    pub shape_id: usize,
    pub axis: Axis,
    pub w: usize,
    pub converged_at: usize,
    pub iters_to_target: Option<Iters>,
    /// Context loss after every adaptation step.
    pub losses: Vec<f64>,
    /// Mask at the stopping step, when kept.
    pub mask: Option<VolumeGrid>,
}

pub const ROW_HEADER: [&str; 12] = [
    "init",
    "family_train",
    "family_eval",
    "fold",
    "shape_id",
    "axis",
    "w",
    "step",
    "dsc",
    "asd_mm",
    "context_loss",
    "wall_seconds",
];

pub const CELL_HEADER: [&str; 9] = [
    "init",
    "family_train",
    "family_eval",
    "fold",
    "shape_id",
    "axis",
    "w",
    "converged_at",
    "iters_to_target",
];

/// A test shape reconstructed from one slice geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Job {
    pub fold: usize,
    pub shape_id: usize,
    pub axis: Axis,
    pub w: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub record_steps: Vec<usize>,
    /// Also emit a row at the early-stopping step.
    pub conv_row: bool,
    /// Cap of the steps-to-target search; `None` skips the search.
    pub search_max_steps: Option<usize>,
    pub keep_masks: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<Row>,
    pub cells: Vec<Cell>,
    pub warnings: Vec<String>,
}

fn family_of(dir: &Path) -> Result<Family> {
    let path = dir.join(train::FAMILY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::config(format!("missing training record {}", path.display())))?;
    Family::parse(text.trim())
        .ok_or_else(|| CliError::config(format!("{}: unknown family", path.display())))
}

fn required_checkpoints(ckpt_dir: &Path, folds: &[usize], inits: &[InitKind]) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    for &fold in folds {
        for init in inits {
            let mode = match init {
                InitKind::Meta => TrainMode::Meta,
                InitKind::Pretrain => TrainMode::Pretrain,
                InitKind::Random => continue,
            };
            paths.push(train::checkpoint_path(ckpt_dir, fold, mode));
        }
    }
    paths
}

/// Fails with a configuration error if any checkpoint the sweep needs is
/// missing. Nothing is computed before this check.
pub fn check_checkpoints(ckpt_dir: &Path, folds: &[usize], inits: &[InitKind]) -> Result<()> {
    let missing: Vec<String> = required_checkpoints(ckpt_dir, folds, inits)
        .into_iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "missing checkpoints: {}",
            missing.join(", ")
        )))
    }
}

/// The priors of one fold, in the order of `cfg.bench.inits`.
pub fn load_priors(ckpt_dir: &Path, fold: usize, cfg: &ExperimentConfig) -> Result<Vec<Prior>> {
    let net = cfg.meta.net;
    cfg.bench
        .inits
        .iter()
        .map(|&init| {
            Ok(match init {
                InitKind::Meta => {
                    let s = checkpoint::load(
                        &train::checkpoint_path(ckpt_dir, fold, TrainMode::Meta),
                        &net,
                    )?;
                    Prior {
                        init,
                        params: s.theta0,
                        alpha: Some(s.alpha),
                    }
                }
                InitKind::Pretrain => {
                    let path = train::checkpoint_path(ckpt_dir, fold, TrainMode::Pretrain);
                    Prior {
                        init,
                        params: checkpoint::load(&path, &net)?.theta0,
                        alpha: None,
                    }
                }
                InitKind::Random => Prior {
                    init,
                    params: siren::init_siren(net, cfg.bench.random_seed)?.params,
                    alpha: None,
                },
            })
        })
        .collect()
}

/// Adaptation settings for a prior: inner-loop steps with its step sizes,
/// or Adam at the baseline learning rate.
pub fn adapt_config(prior: &Prior, cfg: &ExperimentConfig, record_steps: &[usize]) -> AdaptConfig {
    let (update_rule, step_size) = match prior.alpha {
        Some(_) => (UpdateRule::InnerSgd, cfg.meta.alpha0),
        None => (UpdateRule::Adam, cfg.adapt.baseline_step_size),
    };
    AdaptConfig {
        max_steps: cfg.adapt.max_steps,
        update_rule,
        step_size,
        patience: cfg.adapt.patience,
        threshold: cfg.adapt.threshold,
        record_steps: record_steps.to_vec(),
        loss: cfg.meta.loss,
    }
}

fn record_at(res: &ReconResult, step: usize) -> Result<&recon::StepRecord> {
    // Past the stopping step the parameters no longer change.
    let s = if step > res.converged_at {
        res.converged_at
    } else {
        step
    };
    res.at(s)
        .ok_or_else(|| CliError::config(format!("no record at step {step}")))
}

/// Reconstructs one job from every prior. Rows and cells follow the order
/// of `priors`.
#[allow(clippy::too_many_arguments)]
pub fn run_job(
    job: Job,
    grid: &VolumeGrid,
    priors: &[Prior],
    families: (Family, Family),
    cfg: &ExperimentConfig,
    opts: &SweepOptions,
) -> Result<SweepOutput> {
    let obs = sample_slices(grid, job.axis, job.w, 0)?;
    let geometry = GridGeometry {
        dims: grid.dims(),
        spacing_mm: grid.spacing_mm(),
    };
    let mut results = Vec::with_capacity(priors.len());
    for prior in priors {
        let mut acfg = adapt_config(prior, cfg, &opts.record_steps);
        if !opts.conv_row {
            if let Some(&last) = opts.record_steps.last() {
                acfg.max_steps = acfg.max_steps.min(last);
            }
        }
        let clock = MonotonicClock::start();
        let res = recon::reconstruct(
            &cfg.meta.net,
            &prior.params,
            prior.alpha.as_ref(),
            &obs,
            geometry,
            &acfg,
            Some(grid),
            &clock,
        )?;
        results.push(res);
    }
    let target = match priors.iter().position(|p| p.init == InitKind::Meta) {
        Some(i) if opts.search_max_steps.is_some() => {
            let m = record_at(&results[i], 1)?.metrics;
            m.map(|m| m.dsc)
        }
        _ => None,
    };
    let mut out = SweepOutput::default();
    for (prior, res) in priors.iter().zip(&results) {
        let row = |step: StepLabel, rec: &recon::StepRecord| -> Result<Row> {
            let m = rec
                .metrics
                .ok_or_else(|| CliError::config("metrics missing"))?;
            Ok(Row {
                init: prior.init,
                family_train: families.0,
                family_eval: families.1,
                fold: job.fold,
                shape_id: job.shape_id,
                axis: job.axis,
                w: job.w,
                step,
                dsc: m.dsc,
                asd_mm: m.asd_mm,
                context_loss: rec.context_loss,
                wall_seconds: rec.wall_seconds,
            })
        };
        for &s in &opts.record_steps {
            out.rows.push(row(StepLabel::At(s), record_at(res, s)?)?);
        }
        if opts.conv_row {
            out.rows
                .push(row(StepLabel::Conv, record_at(res, res.converged_at)?)?);
        }
        let iters = match (target, opts.search_max_steps) {
            (Some(t), Some(cap)) => {
                let acfg = adapt_config(prior, cfg, &[]);
                let found = recon::iters_to_target(
                    &cfg.meta.net,
                    &prior.params,
                    prior.alpha.as_ref(),
                    &obs,
                    grid,
                    &acfg,
                    t,
                    cap,
                )?;
                Some(found.map_or(Iters::Beyond(cap), Iters::Reached))
            }
            _ => None,
        };
        out.cells.push(Cell {
            init: prior.init,
            family_train: families.0,
            family_eval: families.1,
            fold: job.fold,
            shape_id: job.shape_id,
            axis: job.axis,
            w: job.w,
            converged_at: res.converged_at,
            iters_to_target: iters,
            losses: res.losses.clone(),
            mask: opts.keep_masks.then(|| res.mask.clone()),
        });
    }
    Ok(out)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("worker pool: {e}")))
}

/// Runs `jobs` on a bounded pool and concatenates their outputs in job
/// order.
pub fn run_jobs(
    jobs: &[(Job, &VolumeGrid, &[Prior])],
    families: (Family, Family),
    cfg: &ExperimentConfig,
    opts: &SweepOptions,
) -> Result<SweepOutput> {
    let results: Vec<Result<SweepOutput>> = pool(cfg.bench.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(job, grid, priors)| run_job(job, grid, priors, families, cfg, opts))
            .collect()
    });
    let mut out = SweepOutput::default();
    for r in results {
        let r = r?;
        out.rows.extend(r.rows);
        out.cells.extend(r.cells);
    }
    Ok(out)
}

/// Reconstructs every test shape of the chosen folds from every configured
/// initialization, axis and slice spacing.
pub fn bench(
    data: &Dataset,
    ckpt_dir: &Path,
    cfg: &ExperimentConfig,
    folds: Option<&[usize]>,
) -> Result<SweepOutput> {
    let all: Vec<usize> = (0..cfg.bench.folds).collect();
    let folds = folds.unwrap_or(&all);
    if let Some(&f) = folds.iter().find(|&&f| f >= cfg.bench.folds) {
        return Err(CliError::config(format!(
            "fold {f} out of range for {} folds",
            cfg.bench.folds
        )));
    }
    check_checkpoints(ckpt_dir, folds, &cfg.bench.inits)?;
    let splits = split::kfold_split(&data.manifest.ids(), cfg.bench.folds, cfg.bench.split_seed)?;
    let family = data.family();
    let mut priors = Vec::with_capacity(folds.len());
    for &fold in folds {
        if cfg.bench.inits.iter().any(|&i| i != InitKind::Random) {
            let trained = family_of(&train::fold_dir(ckpt_dir, fold))?;
            if trained != family {
                return Err(CliError::config(format!(
                    "fold {fold} was trained on {trained}, the dataset is {family}"
                )));
            }
        }
        priors.push(load_priors(ckpt_dir, fold, cfg)?);
    }
    let mut jobs = Vec::new();
    for (&fold, fold_priors) in folds.iter().zip(&priors) {
        for &axis in &cfg.bench.axes {
            for &w in &cfg.bench.ws {
                for &shape_id in &splits[fold].test {
                    let job = Job {
                        fold,
                        shape_id,
                        axis,
                        w,
                    };
                    jobs.push((job, data.grid(shape_id)?, fold_priors.as_slice()));
                }
            }
        }
    }
    let opts = SweepOptions {
        record_steps: cfg.adapt.record_steps.clone(),
        conv_row: true,
        search_max_steps: Some(cfg.adapt.search_max_steps),
        keep_masks: cfg.bench.save_masks,
    };
    run_jobs(&jobs, (family, family), cfg, &opts)
}

/// Steps reported by transfer sweeps.
pub const TRANSFER_STEPS: [usize; 2] = [1, 100];

/// Adapts the priors of fold `fold` from `ckpt_dir` to every shape of
/// `data`. Matching families produce a warning.
pub fn transfer(
    data: &Dataset,
    ckpt_dir: &Path,
    fold: usize,
    cfg: &ExperimentConfig,
) -> Result<SweepOutput> {
    check_checkpoints(ckpt_dir, &[fold], &cfg.bench.inits)?;
    let dir = train::fold_dir(ckpt_dir, fold);
    let family_train = family_of(&dir)?;
    let family_eval = data.family();
    let priors = load_priors(ckpt_dir, fold, cfg)?;
    let mut jobs = Vec::new();
    for &axis in &cfg.bench.axes {
        for &w in &cfg.bench.ws {
            for (entry, grid) in data.manifest.shapes.iter().zip(&data.shapes) {
                let job = Job {
                    fold,
                    shape_id: entry.id,
                    axis,
                    w,
                };
                jobs.push((job, grid, priors.as_slice()));
            }
        }
    }
    let opts = SweepOptions {
        record_steps: TRANSFER_STEPS.to_vec(),
        conv_row: false,
        search_max_steps: None,
        keep_masks: cfg.bench.save_masks,
    };
    let mut out = run_jobs(&jobs, (family_train, family_eval), cfg, &opts)?;
    if family_train == family_eval {
        out.warnings.push(format!(
            "prior and target are both {family_eval}; this is not a transfer"
        ));
    }
    Ok(out)
}

/// Mean and standard deviation (population form) of a nonempty sample.
pub fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Aggregate over shapes and folds of one (init, families, axis, w, step).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub init: InitKind,
    pub family_train: Family,
    pub family_eval: Family,
    pub axis: Axis,
    pub w: usize,
    pub step: StepLabel,
    pub n: usize,
    pub dsc: (f64, f64),
    /// Over the shapes whose ASD is defined.
    pub asd_mm: Option<(f64, f64)>,
    pub wall_seconds: (f64, f64),
    pub iters_to_target: String,
}

type GroupKey = (InitKind, Family, Family, Axis, usize);

/// Mean iterations to target, or `>cap` with the number of misses.
fn iters_summary(its: &[Iters]) -> String {
    if its.is_empty() {
        return String::new();
    }
    let reached: Vec<f64> = its
        .iter()
        .filter_map(|i| match i {
            Iters::Reached(s) => Some(*s as f64),
            Iters::Beyond(_) => None,
        })
        .collect();
    let cap = its
        .iter()
        .filter_map(|i| match i {
            Iters::Beyond(m) => Some(*m),
            Iters::Reached(_) => None,
        })
        .max();
    match (cap, reached.is_empty()) {
        (None, _) => format!("{:.2}", mean_sd(&reached).expect("nonempty").0),
        (Some(m), true) => format!(">{m}"),
        (Some(m), false) => format!(
            "{:.2} ({} of {} >{m})",
            mean_sd(&reached).expect("nonempty").0,
            its.len() - reached.len(),
            its.len()
        ),
    }
}

/// Groups rows by (init, families, axis, w, step) in order of first
/// appearance.
pub fn summarize(rows: &[Row], cells: &[Cell]) -> Vec<SummaryRow> {
    let mut order: Vec<(GroupKey, StepLabel)> = Vec::new();
    let mut groups: BTreeMap<(GroupKey, StepLabel), Vec<&Row>> = BTreeMap::new();
    for r in rows {
        let key = ((r.init, r.family_train, r.family_eval, r.axis, r.w), r.step);
        groups.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        groups.get_mut(&key).expect("inserted").push(r);
    }
    let mut iters: BTreeMap<GroupKey, Vec<Iters>> = BTreeMap::new();
    for c in cells {
        if let Some(i) = c.iters_to_target {
            iters
                .entry((c.init, c.family_train, c.family_eval, c.axis, c.w))
                .or_default()
                .push(i);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&Row) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let asd: Vec<f64> = g.iter().filter_map(|r| r.asd_mm).collect();
            let (k, step) = key;
            SummaryRow {
                init: k.0,
                family_train: k.1,
                family_eval: k.2,
                axis: k.3,
                w: k.4,
                step,
                n: g.len(),
                dsc: mean_sd(&col(|r| r.dsc)).expect("nonempty group"),
                asd_mm: mean_sd(&asd),
                wall_seconds: mean_sd(&col(|r| r.wall_seconds)).expect("nonempty group"),
                iters_to_target: iters.get(&k).map_or(String::new(), |v| iters_summary(v)),
            }
        })
        .collect()
}

fn pm((m, s): (f64, f64)) -> String {
    format!("{m:.4} ± {s:.4}")
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "init",
    "family_train",
    "family_eval",
    "axis",
    "w",
    "step",
    "n",
    "dsc_mean",
    "dsc_sd",
    "asd_mean",
    "asd_sd",
    "wall_mean",
    "wall_sd",
    "iters_to_target",
    "asd_n",
];

/// The summary as an aligned plain-text table.
pub fn format_table(rows: &[SummaryRow], with_asd_n: &[usize]) -> String {
    let header = [
        "init", "prior", "eval", "axis", "w", "step", "n", "DSC", "ASD (mm)", "time (s)", "iters",
    ];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (r, asd_n) in rows
        .iter()
        .zip(with_asd_n.iter().chain(std::iter::repeat(&0)))
    {
        let asd = match r.asd_mm {
            Some(a) if *asd_n < r.n && *asd_n > 0 => format!("{} [{asd_n}]", pm(a)),
            Some(a) => pm(a),
            None => "-".into(),
        };
        lines.push(vec![
            r.init.name().into(),
            r.family_train.name().into(),
            r.family_eval.name().into(),
            r.axis.name().into(),
            r.w.to_string(),
            r.step.to_string(),
            r.n.to_string(),
            pm(r.dsc),
            asd,
            pm(r.wall_seconds),
            r.iters_to_target.clone(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn asd_counts(rows: &[Row], summary: &[SummaryRow]) -> Vec<usize> {
    summary
        .iter()
        .map(|s| {
            rows.iter()
                .filter(|r| {
                    r.init == s.init
                        && r.family_train == s.family_train
                        && r.family_eval == s.family_eval
                        && r.axis == s.axis
                        && r.w == s.w
                        && r.step == s.step
                        && r.asd_mm.is_some()
                })
                .count()
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROW_HEADER)?;
    for r in rows {
        w.write_record([
            r.init.name().to_string(),
            r.family_train.name().to_string(),
            r.family_eval.name().to_string(),
            r.fold.to_string(),
            r.shape_id.to_string(),
            r.axis.name().to_string(),
            r.w.to_string(),
            r.step.to_string(),
            r.dsc.to_string(),
            opt_num(r.asd_mm),
            r.context_loss.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_cells(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CELL_HEADER)?;
    for c in cells {
        w.write_record([
            c.init.name().to_string(),
            c.family_train.name().to_string(),
            c.family_eval.name().to_string(),
            c.fold.to_string(),
            c.shape_id.to_string(),
            c.axis.name().to_string(),
            c.w.to_string(),
            c.converged_at.to_string(),
            c.iters_to_target.map_or(String::new(), |i| i.to_string()),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Context loss after every adaptation step, one line per step.
pub fn write_curves(path: &Path, cells: &[Cell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "init",
        "fold",
        "shape_id",
        "axis",
        "w",
        "step",
        "context_loss",
    ])?;
    for c in cells {
        for (step, l) in c.losses.iter().enumerate() {
            w.write_record([
                c.init.name().to_string(),
                c.fold.to_string(),
                c.shape_id.to_string(),
                c.axis.name().to_string(),
                c.w.to_string(),
                step.to_string(),
                l.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_summary(dir: &Path, rows: &[Row], summary: &[SummaryRow]) -> Result<()> {
    let counts = asd_counts(rows, summary);
    let path = dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SUMMARY_HEADER)?;
    for (s, asd_n) in summary.iter().zip(&counts) {
        w.write_record([
            s.init.name().to_string(),
            s.family_train.name().to_string(),
            s.family_eval.name().to_string(),
            s.axis.name().to_string(),
            s.w.to_string(),
            s.step.to_string(),
            s.n.to_string(),
            s.dsc.0.to_string(),
            s.dsc.1.to_string(),
            opt_num(s.asd_mm.map(|a| a.0)),
            opt_num(s.asd_mm.map(|a| a.1)),
            s.wall_seconds.0.to_string(),
            s.wall_seconds.1.to_string(),
            s.iters_to_target.clone(),
            asd_n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let path = dir.join(SUMMARY_TXT);
    fs::write(&path, format_table(summary, &counts)).map_err(|e| CliError::io(&path, e))
}

pub const ROWS_CSV: &str = "rows.csv";
pub const CELLS_CSV: &str = "cells.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Writes rows, cells, loss curves, the summary tables and the
/// configuration into `dir`.
pub fn write_outputs(
    dir: &Path,
    out: &SweepOutput,
    cfg: &ExperimentConfig,
) -> Result<Vec<SummaryRow>> {
    train::write_config(dir, cfg)?;
    write_rows(&dir.join(ROWS_CSV), &out.rows)?;
    write_cells(&dir.join(CELLS_CSV), &out.cells)?;
    write_curves(&dir.join(CURVES_CSV), &out.cells)?;
    let summary = summarize(&out.rows, &out.cells);
    write_summary(dir, &out.rows, &summary)?;
    let masks = dir.join("masks");
    for c in &out.cells {
        if let Some(m) = &c.mask {
            fs::create_dir_all(&masks).map_err(|e| CliError::io(&masks, e))?;
            let name = format!(
                "{}_fold{}_shape{:04}_{}_w{}.mvol",
                c.init.name(),
                c.fold,
                c.shape_id,
                c.axis.name(),
                c.w
            );
            mvol::save(&masks.join(name), m)?;
        }
    }
    Ok(summary)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| CliError::Format {
        path: path.to_path_buf(),
        offset: rec.position().map_or(0, |p| p.byte()),
        detail: format!("bad value `{raw}` in column {i}"),
    })
}

fn parsed<T>(
    raw: &str,
    parse: fn(&str) -> Option<T>,
    rec: &csv::StringRecord,
    path: &Path,
) -> Result<T> {
    parse(raw).ok_or_else(|| CliError::Format {
        path: path.to_path_buf(),
        offset: rec.position().map_or(0, |p| p.byte()),
        detail: format!("bad value `{raw}`"),
    })
}

fn check_header(r: &mut csv::Reader<fs::File>, want: &[&str], path: &Path) -> Result<()> {
    let h = r.headers()?;
    if h.iter().ne(want.iter().copied()) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "unexpected header".into(),
        });
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(&mut r, &ROW_HEADER, path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let asd = rec.get(9).unwrap_or("");
        out.push(Row {
            init: field(&rec, 0, path)?,
            family_train: parsed(&rec[1], Family::parse, &rec, path)?,
            family_eval: parsed(&rec[2], Family::parse, &rec, path)?,
            fold: field(&rec, 3, path)?,
            shape_id: field(&rec, 4, path)?,
            axis: parsed(&rec[5], Axis::parse, &rec, path)?,
            w: field(&rec, 6, path)?,
            step: field(&rec, 7, path)?,
            dsc: field(&rec, 8, path)?,
            asd_mm: if asd.is_empty() {
                None
            } else {
                Some(field(&rec, 9, path)?)
            },
            context_loss: field(&rec, 10, path)?,
            wall_seconds: field(&rec, 11, path)?,
        });
    }
    Ok(out)
}

pub fn read_cells(path: &Path) -> Result<Vec<Cell>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(&mut r, &CELL_HEADER, path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let iters = rec.get(8).unwrap_or("");
        out.push(Cell {
            init: field(&rec, 0, path)?,
            family_train: parsed(&rec[1], Family::parse, &rec, path)?,
            family_eval: parsed(&rec[2], Family::parse, &rec, path)?,
            fold: field(&rec, 3, path)?,
            shape_id: field(&rec, 4, path)?,
            axis: parsed(&rec[5], Axis::parse, &rec, path)?,
            w: field(&rec, 6, path)?,
            converged_at: field(&rec, 7, path)?,
            iters_to_target: if iters.is_empty() {
                None
            } else {
                Some(field(&rec, 8, path)?)
            },
            losses: Vec::new(),
            mask: None,
        });
    }
    Ok(out)
}

/// Recomputes the summary tables of a sweep directory from its raw CSVs.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let rows = read_rows(&dir.join(ROWS_CSV))?;
    let cells = read_cells(&dir.join(CELLS_CSV))?;
    let summary = summarize(&rows, &cells);
    write_summary(dir, &rows, &summary)?;
    Ok(summary)
}
