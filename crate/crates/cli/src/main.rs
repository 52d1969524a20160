//! `cnnflow`: generate cavity datasets, train CNN surrogates, evaluate their
//! rollouts and render reports.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 solver
//! instability, 4 I/O or file-format error, 5 training divergence,
//! 6 rollout divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cnnflow::harness::{GenerationMode, Strategy};
use cnnflow::nets::ModelKind;
use cnnflow::Error;

#[derive(Debug, Parser)]
#[command(name = "cnnflow", version, about = "CNN surrogates for a natural-convection cavity")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SharedArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel evaluation workers.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the cavity solver and write an NCFD dataset with its manifest.
    Generate(GenerateArgs),
    /// Train surrogates on a dataset and write checkpoints.
    Train(TrainArgs),
    /// Roll trained checkpoints out over the test split and score them.
    Eval(EvalArgs),
    /// Render plots and a summary from metrics CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct SplitArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Leading records left out of every split.
    #[arg(long)]
    pub skip: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of time steps, one record each.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Cavity side length in m.
    #[arg(long)]
    pub length: Option<f64>,
    /// Amplitude in K of seeded initial temperature noise.
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// File name of the dataset inside the output directory.
    #[arg(long, default_value = "cavity.ncfd")]
    pub name: String,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Models to train (repeatable).
    #[arg(long = "model")]
    pub models: Vec<ModelKind>,
    /// Strategies to train (repeatable).
    #[arg(long = "strategy")]
    pub strategies: Vec<Strategy>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub hidden_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args, Default)]
pub struct ThresholdArgs {
    /// Temperature error threshold in K.
    #[arg(long)]
    pub tau_t: Option<f64>,
    /// u_x error threshold in m/s.
    #[arg(long)]
    pub tau_ux: Option<f64>,
    /// u_y error threshold in m/s.
    #[arg(long)]
    pub tau_uy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoints to evaluate (repeatable).
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Evaluate every checkpoint in this directory.
    #[arg(long)]
    pub models_dir: Option<PathBuf>,
    /// Generation modes (repeatable); both by default.
    #[arg(long = "mode")]
    pub modes: Vec<GenerationMode>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files or directories holding `metrics.csv` (repeatable);
    /// `<out>/metrics.csv` by default.
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Stability { .. } => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        Error::TrainingDiverged { .. } => 5,
        Error::RolloutDiverged { .. } => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
