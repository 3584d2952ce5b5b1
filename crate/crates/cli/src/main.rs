//! `flnet`: flood damage mapping from super-resolved NDVI.

mod commands;
mod config;
mod fsutil;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flnet_autodiff::{AutodiffError, TrainError};
use flnet_core::RasterError;
use flnet_models::ModelError;

use commands::*;
use config::{Config, ConfigError};
use fsutil::MissingFile;

#[derive(Debug, Parser)]
#[command(name = "flnet", version, about = "Flood damage mapping from super-resolved NDVI", long_about = None)]
struct Cli {
    /// Base for relative paths.
    #[arg(long, global = true, env = "FLNET_WORKDIR")]
    workdir: Option<PathBuf>,
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scene bundles.
    Synth(SynthArgs),
    /// NDVI, quality masking, co-registration and resampling of an image pair.
    Preprocess(PreprocessArgs),
    /// Train the super-resolution network.
    TrainSr(TrainArgs),
    /// Super-resolve a low-resolution NDVI raster.
    InferSr(InferSrArgs),
    /// Threshold labels from a pre/post NDVI pair.
    Label(LabelArgs),
    /// Train the damage segmentation network.
    TrainSeg(TrainArgs),
    /// Predict a damage map from a pre/post NDVI pair.
    Infer(InferArgs),
    /// Score damage maps and super-resolution outputs.
    Evaluate(EvaluateArgs),
}

/// Exit status per error class.
mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const GRID_MISMATCH: u8 = 4;
    pub const DIVERGED: u8 = 5;
    pub const FORMAT: u8 = 6;
}

fn raster_code(e: &RasterError) -> Option<u8> {
    match e {
        RasterError::GridMismatch(_) => Some(exit::GRID_MISMATCH),
        RasterError::BadMagic | RasterError::Truncated { .. } | RasterError::InvalidHeader(_) | RasterError::DimensionOverflow { .. } => {
            Some(exit::FORMAT)
        }
        RasterError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Some(exit::MISSING_FILE),
        _ => None,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return exit::USAGE;
        }
        if cause.is::<MissingFile>() {
            return exit::MISSING_FILE;
        }
        if cause.is::<Diverged>() {
            return exit::DIVERGED;
        }
        if let Some(e) = cause.downcast_ref::<RasterError>() {
            if let Some(c) = raster_code(e) {
                return c;
            }
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            match e {
                ModelError::Misaligned(_) => return exit::GRID_MISMATCH,
                ModelError::Checkpoint(_) => return exit::FORMAT,
                ModelError::Config(_) => return exit::USAGE,
                ModelError::Train(TrainError::Diverged { .. }) => return exit::DIVERGED,
                _ => {}
            }
        }
        if let Some(AutodiffError::Checkpoint(_)) = cause.downcast_ref::<AutodiffError>() {
            return exit::FORMAT;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return exit::MISSING_FILE;
            }
        }
    }
    exit::OTHER
}

fn run(cli: Cli, command_line: &str) -> anyhow::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let workdir = cli.workdir.unwrap_or_else(|| PathBuf::from("."));
    let config_path = cli.config.map(|p| if p.is_absolute() { p } else { workdir.join(p) });
    let cfg = Config::load(config_path.as_deref(), &overrides)?;
    let ctx = Ctx { cfg, workdir };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::TrainSr(a) => train_sr(&ctx, a),
        Command::InferSr(a) => infer_sr_cmd(&ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::TrainSeg(a) => train_seg(&ctx, a),
        Command::Infer(a) => infer(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a, command_line),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let command_line = args.iter().skip(1).cloned().collect::<Vec<_>>().join(" ");
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &command_line) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
