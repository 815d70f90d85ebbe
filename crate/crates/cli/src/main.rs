//! `dacad`: generate shift tasks, pre-train, adapt, evaluate, and compute
//! sliced Wasserstein distances between sample files.
//!
//! Exit status is 0 on success, 1 for runtime failures (including
//! divergence) and 2 for usage or validation errors.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dacad::Normalization;

/// An error caused by the invocation or its inputs rather than by the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "dacad",
    version,
    about = "Domain adaptation by class-conditional sliced Wasserstein alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sliced Wasserstein distance between two CSV sample files.
    Swd(SwdArgs),
    /// Write a synthetic source/target pair as CSV files plus a manifest.
    GenData(GenDataArgs),
    /// Fit the model on source data and save the checkpoint.
    Pretrain(RunArgs),
    /// Adapt a pre-trained checkpoint to the target domain.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a labeled CSV file.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SwdArgs {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    /// Number of random projection directions.
    #[arg(long, short = 'L', default_value_t = 128)]
    pub projections: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = NormArg::Mean)]
    pub normalization: NormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail instead of subsampling when the row counts differ.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum NormArg {
    Sum,
    Mean,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Sum => Normalization::Sum,
            NormArg::Mean => Normalization::Mean,
        }
    }
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Generator name: gaussian-shift or two-moons.
    #[arg(long, conflicts_with_all = ["config", "from_manifest"])]
    pub generator: Option<String>,
    /// Override a generator parameter, e.g. `--set angle_deg=45`.
    #[arg(long = "set", value_name = "KEY=VALUE", requires = "generator")]
    pub overrides: Vec<String>,
    /// Take the generator from a synthetic-task experiment config.
    #[arg(long, conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Regenerate the data described by an earlier manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment config (JSON). Without it the built-in defaults are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the run summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to start from; defaults to each seed's pre-trained file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Skip the alignment step, giving the baseline with identical batches.
    #[arg(long)]
    pub source_only: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled CSV file.
    pub data: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dacad::Error>() {
            return match e {
                dacad::Error::Divergence { .. }
                | dacad::Error::NonFinite(_)
                | dacad::Error::Io { .. }
                | dacad::Error::Consistency(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Swd(a) => commands::swd(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
