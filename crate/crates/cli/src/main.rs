//! `cdsm`: synthetic data, training, inference, evaluation and rendering
//! for the camera-radar fusion detector.

mod commands;
mod config;
mod plot;
mod render;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use cdsm_core::train::Regime;
use cdsm_core::Error;
use clap::{Args, Parser, Subcommand};

use crate::config::Split;

#[derive(Parser, Debug)]
#[command(name = "cdsm", version, about = "Camera-radar fusion detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment file (TOML).
    #[arg(short, long, env = "CDSM_CONFIG")]
    pub config: PathBuf,
    /// Read scenes written by `preprocess` instead of the raw splits.
    #[arg(long)]
    pub preprocessed: bool,
}

#[derive(Args, Debug, Clone)]
pub struct Target {
    #[command(flatten)]
    pub common: Common,
    /// Model to use; defaults to `train.regime` of the config.
    #[arg(short, long)]
    pub regime: Option<Regime>,
    /// Scene split; defaults to `eval.split` of the config.
    #[arg(short, long, value_enum)]
    pub split: Option<Split>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic train/val/test splits.
    Synth(Common),
    /// Letterbox images, clip pointclouds and filter labels of every split.
    Preprocess(Common),
    /// Train one regime; fusion regimes read earlier checkpoints of the run.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        regime: Option<Regime>,
    },
    /// Write per-scene detections of a trained model.
    Infer(Target),
    /// Score detections; writes a JSON report and a PR-curve SVG.
    Eval(Target),
    /// Label and point statistics of a split.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Camera-overlay and BEV images of detections against ground truth.
    Render(Target),
}

/// Process exit status per failure class.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 3,
                Error::Io { .. } | Error::Parse { .. } | Error::Image { .. } => 4,
                Error::MissingCheckpoint(_) => 5,
                Error::Checkpoint(_) => 6,
                Error::NonFiniteGradient(_) => 7,
                _ => 8,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(c) => commands::synth(&c),
        Command::Preprocess(c) => commands::preprocess(&c),
        Command::Train { common, regime } => commands::train(&common, regime),
        Command::Infer(t) => commands::infer(&t),
        Command::Eval(t) => commands::eval(&t),
        Command::Stats { common, split } => commands::stats(&common, split),
        Command::Render(t) => commands::render(&t),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
