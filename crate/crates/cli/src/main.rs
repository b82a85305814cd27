mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chestxr::data::FixtureConfig;
use chestxr::zoo::ArchId;

use crate::commands::PredictFormat;
use crate::config::{require, Overrides, RunConfig};

/// Multi-label chest radiograph classification: data preparation, training,
/// evaluation and reporting.
#[derive(Debug, Parser)]
#[command(name = "chestxr", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for splitting, shuffling, augmentation and initialization.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Model architecture.
    #[arg(long, global = true, value_parser = parse_arch)]
    arch: Option<ArchId>,
    /// Directory that image paths in manifests are relative to; falls back
    /// to the config, then CHESTXR_DATA_ROOT, then the manifest directory.
    #[arg(long, global = true, value_name = "PATH")]
    data_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Decision threshold; a label is predicted positive when its
    /// probability is strictly greater.
    #[arg(long, global = true, value_name = "F")]
    threshold: Option<f64>,
    /// Never download pretrained weights; use only the local cache.
    #[arg(long, global = true)]
    offline: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write per-label counts of -1/1/0/blank for a manifest.
    Summarize {
        /// Manifest to summarize; defaults to `train_csv` from the config.
        csv: Option<PathBuf>,
    },
    /// Split a manifest into patient-disjoint train.csv and valid.csv.
    Split {
        csv: Option<PathBuf>,
        #[arg(long)]
        val_fraction: Option<f64>,
    },
    /// Train a model; writes a checkpoint, epoch logs, parameter summary
    /// and training curves.
    Train,
    /// Score a checkpoint on a labelled manifest.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Test manifest; defaults to `test_csv` from the config.
        test_csv: Option<PathBuf>,
    },
    /// Per-image probabilities and thresholded labels.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// A manifest with a `Path` column, or a single image file.
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: PredictFormat,
    },
    /// Merge train/evaluate outputs of several runs into comparison tables.
    Report {
        /// Run output directories.
        #[arg(long, num_args = 1.., required = true, value_name = "DIR")]
        compare: Vec<PathBuf>,
    },
    /// Write a synthetic planted-signal dataset.
    MakeFixture {
        #[arg(long, default_value_t = 200)]
        records: usize,
        #[arg(long, default_value_t = 100)]
        patients: usize,
        #[arg(long, default_value_t = 64)]
        image_size: u32,
    },
}

fn parse_arch(s: &str) -> Result<ArchId, String> {
    s.parse().map_err(|e: chestxr::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let g = cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: g.seed,
        arch: g.arch,
        data_root: g.data_root.clone(),
        out: g.out.clone(),
        threshold: g.threshold,
    });
    match cli.command {
        Command::Summarize { csv } => {
            let csv = csv.or(cfg.train_csv.clone());
            commands::summarize(require(&csv, "manifest path")?, cfg.output_dir.as_deref())?;
        }
        Command::Split { csv, val_fraction } => {
            let csv = csv.or(cfg.train_csv.clone());
            commands::split(
                require(&csv, "manifest path")?,
                val_fraction.unwrap_or(cfg.val_fraction),
                cfg.split_seed,
                cfg.output_dir()?,
            )?;
        }
        Command::Train => commands::train(&cfg, g.offline)?,
        Command::Evaluate {
            checkpoint,
            test_csv,
        } => {
            let test_csv = test_csv.or(cfg.test_csv.clone());
            commands::evaluate(
                &cfg,
                &checkpoint,
                require(&test_csv, "test manifest")?,
                g.threshold,
            )?;
        }
        Command::Predict {
            checkpoint,
            input,
            format,
        } => return commands::predict(&cfg, &checkpoint, &input, g.threshold, format),
        Command::Report { compare } => commands::report(&compare, cfg.output_dir()?)?,
        Command::MakeFixture {
            records,
            patients,
            image_size,
        } => {
            let fc = FixtureConfig {
                image_size,
                ..FixtureConfig::new(records, patients, g.seed.unwrap_or(1))
            };
            commands::make_fixture(&fc, cfg.output_dir()?)?;
        }
    }
    Ok(true)
}

/// 2 for bad inputs (files, configuration, usage), 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<chestxr::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>()
            || cause.is::<toml::de::Error>()
            || cause.is::<serde_json::Error>()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: every input row failed");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
