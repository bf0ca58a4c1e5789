//! Command-line entry point: sequence generation, training, tracking,
//! evaluation, ablation, and attention dumps. Every command echoes its
//! fully resolved config and seed into the output directory; identical
//! echoes mean identical outputs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 missing
//! input, 3 numeric failure.

mod config;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use treg_core::{FusionKind, TregError};

use config::load_config;

#[derive(Parser)]
#[command(name = "treg", version, about = "Target-transformed regression tracker on synthetic benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for the whole run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct TrackLikeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fusion kind: tat | dwcorr | pcorr | none.
    #[arg(long)]
    fusion: Option<String>,
    /// Queue preset: static1 | static3 | static7 | fixed | confidence.
    #[arg(long)]
    queue: Option<String>,
    /// Model checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory (from `gen`).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark suite.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model on synthetic sequences.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Fusion kind to train: tat | dwcorr | pcorr | none.
        #[arg(long)]
        fusion: Option<String>,
        /// Train on this generated dataset directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Track a dataset with a trained checkpoint.
    Track(TrackLikeArgs),
    /// Recompute metrics from tracked box files.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory with ground truth.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory containing boxes_<sequence>.txt files.
        #[arg(long)]
        boxes: Option<PathBuf>,
    },
    /// Run the fusion and queue ablation grid.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Dump per-frame attention maps as PGM and CSV.
    DumpAttn(TrackLikeArgs),
}

fn parse_fusion(s: Option<&str>) -> Result<Option<FusionKind>, TregError> {
    s.map(FusionKind::parse).transpose()
}

fn run(cli: Cli) -> Result<(), TregError> {
    match cli.command {
        Command::Gen { common } => {
            let cfg: config::GenConfig = load_config(common.config.as_deref())?;
            commands::run_gen(cfg.resolve(common.seed), &common.out, common.force)
        }
        Command::Train { common, fusion, dataset } => {
            let mut cfg: config::TrainCmdConfig = load_config(common.config.as_deref())?;
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            let cfg = cfg.resolve(common.seed, parse_fusion(fusion.as_deref())?);
            commands::run_train(cfg, &common.out, common.force)
        }
        Command::Track(args) => {
            let cfg: config::TrackCmdConfig = load_config(args.common.config.as_deref())?;
            let cfg = cfg.resolve(
                args.common.seed,
                parse_fusion(args.fusion.as_deref())?,
                args.queue.as_deref(),
                args.checkpoint,
                args.dataset,
            )?;
            commands::run_track(cfg, &args.common.out, args.common.force)
        }
        Command::Eval { common, dataset, boxes } => {
            let mut cfg: config::EvalCmdConfig = load_config(common.config.as_deref())?;
            if dataset.is_some() {
                cfg.dataset = dataset;
            }
            if boxes.is_some() {
                cfg.boxes = boxes;
            }
            commands::run_eval(cfg, &common.out, common.force)
        }
        Command::Ablate { common } => {
            let cfg: config::AblateCmdConfig = load_config(common.config.as_deref())?;
            commands::run_ablate(cfg.resolve(common.seed), &common.out, common.force)
        }
        Command::DumpAttn(args) => {
            let mut cfg: config::DumpAttnCmdConfig = load_config(args.common.config.as_deref())?;
            if let Some(seed) = args.common.seed {
                cfg.seed = seed;
            }
            cfg.tracker.seed = cfg.seed;
            if let Some(f) = parse_fusion(args.fusion.as_deref())? {
                cfg.tracker.fusion = f;
            }
            if let Some(q) = args.queue.as_deref() {
                cfg.tracker.queue = treg_core::QueueConfig::preset(q)?;
            }
            if args.checkpoint.is_some() {
                cfg.checkpoint = args.checkpoint;
            }
            if args.dataset.is_some() {
                cfg.dataset = args.dataset;
            }
            commands::run_dump_attn(cfg, &args.common.out, args.common.force)
        }
    }
}

fn exit_code(err: &TregError) -> u8 {
    match err {
        TregError::MissingInput(_) | TregError::Io(_) => 2,
        TregError::Numeric(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
