use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metashape::bench::{self, SweepOutput};
use metashape::config::ExperimentConfig;
use metashape::dataset::{self, Dataset, GenSpec};
use metashape::train::{self, TrainMode};
use metashape::{split, CliError, Result};

#[derive(Parser)]
#[command(
    name = "metashape",
    version,
    about = "Meta-learned shape priors from sparse slices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset from a family spec file.
    GenData {
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a meta prior or the pretraining baseline on one fold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long, default_value = "meta")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Reconstruct every test shape from each init and write the tables.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict to these folds (comma separated).
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<usize>>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Adapt priors trained on one family to the shapes of another.
    Transfer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Recompute the summary tables of a bench or transfer directory.
    Report { dir: PathBuf },
    /// Print the train and test ids of every fold.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn finish(out: &Path, sweep: &SweepOutput, cfg: &ExperimentConfig) -> Result<()> {
    for w in &sweep.warnings {
        eprintln!("warning: {w}");
    }
    bench::write_outputs(out, sweep, cfg)?;
    print_summary(out)
}

fn print_summary(dir: &Path) -> Result<()> {
    let path = dir.join(bench::SUMMARY_TXT);
    print!(
        "{}",
        std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = GenSpec::load(&spec)?;
            let m = dataset::generate(&spec, &out)?;
            println!(
                "{} shapes of {} in {} (digest {})",
                m.shapes.len(),
                m.family.family,
                out.display(),
                dataset::directory_digest(&out)?
            );
        }
        Command::Train {
            data,
            fold,
            mode,
            config: cfg_path,
            out,
        } => {
            let mode = TrainMode::parse(&mode)
                .ok_or_else(|| CliError::config(format!("unknown mode `{mode}`")))?;
            let cfg = config(cfg_path.as_deref())?;
            if fold >= cfg.bench.folds {
                return Err(CliError::config(format!(
                    "fold {fold} out of range for {} folds",
                    cfg.bench.folds
                )));
            }
            let data = Dataset::load(&data)?;
            let every = (cfg.meta.epochs / 20).max(1) as u32;
            let ckpt = train::cmd_train(&data, fold, mode, &cfg, &out, &mut |r| {
                if r.epoch % every == 0 {
                    eprintln!(
                        "epoch {} loss {:.5} ({:.1} s)",
                        r.epoch, r.outer_loss, r.wall_seconds
                    );
                }
            })?;
            println!("wrote {}", ckpt.display());
        }
        Command::Bench {
            data,
            checkpoints,
            config: cfg_path,
            folds,
            out,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            let data = Dataset::load(&data)?;
            let sweep = bench::bench(&data, &checkpoints, &cfg, folds.as_deref())?;
            finish(&out, &sweep, &cfg)?;
        }
        Command::Transfer {
            data,
            checkpoints,
            fold,
            config: cfg_path,
            out,
        } => {
            let cfg = config(cfg_path.as_deref())?;
            let data = Dataset::load(&data)?;
            let sweep = bench::transfer(&data, &checkpoints, fold, &cfg)?;
            finish(&out, &sweep, &cfg)?;
        }
        Command::Report { dir } => {
            bench::report(&dir)?;
            print_summary(&dir)?;
        }
        Command::Split { data, folds, seed } => {
            let m = dataset::Manifest::load(&data)?;
            for (k, f) in split::kfold_split(&m.ids(), folds, seed)?
                .iter()
                .enumerate()
            {
                let list = |ids: &[usize]| {
                    ids.iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                };
                println!("fold {k} test {}", list(&f.test));
                println!("fold {k} train {}", list(&f.train));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
