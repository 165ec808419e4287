//! `txcnn`: generate phantom data, preprocess it, train and compare models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "txcnn", version, about = "Temporal CNN / X-CNN experiments on slice series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Abs,
    Rel,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic slice dataset.
    Generate(GenerateArgs),
    /// Expand, difference, timestamp and partition a dataset.
    Preprocess(PreprocessArgs),
    /// Train one model on preprocessed data.
    Train(TrainArgs),
    /// Score a saved model on a split of preprocessed data.
    Evaluate(EvaluateArgs),
    /// Train all six architectures on the same data and seeds.
    Compare(CompareArgs),
    /// Finite-difference checks of every layer and of miniature models.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
pub struct GenerateArgs {
    /// Output directory (absent or empty).
    #[arg(long)]
    pub out: PathBuf,
    /// key=value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mice_per_group: Option<usize>,
    /// Slices per mouse-week, e.g. 40..40.
    #[arg(long)]
    pub slices: Option<String>,
    /// Drop the final week of one PTH mouse.
    #[arg(long)]
    pub missing_final_week: bool,
    /// Extra key=value setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub settings: Vec<String>,
}

#[derive(clap::Args)]
pub struct PreprocessArgs {
    /// Dataset directory written by `generate` (or the same layout).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "abs")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "off")]
    pub timestamps: Switch,
    /// Seed of the hold-out and train/validation partition.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Registration search window in pixels.
    #[arg(long, default_value_t = txcnn::prep::DEFAULT_MAX_SHIFT)]
    pub max_shift: usize,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// cnn, cnn-ts, xcnn-absdiff, xcnn-reldiff, xcnn-ts-absdiff or xcnn-ts-reldiff.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preprocessed data directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Preprocessed data directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Write per-sample predictions here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct CompareArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Comma-separated report epochs; the largest is the run length.
    #[arg(long, default_value = "5,10")]
    pub epochs: String,
    /// key=value training settings shared by all runs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = txcnn::prep::DEFAULT_MAX_SHIFT)]
    pub max_shift: usize,
    /// Run the six models one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
