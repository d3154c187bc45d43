use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "icpcast",
    version,
    about = "Intracranial-pressure forecasting pipeline"
)]
pub struct Cli {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; defaults to `train.seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw recordings (manifest.json + CSV files) to clean per-minute signals.
    Preprocess(IoArgs),
    /// Clean signals to history/target segments (segments.jsonl).
    Segment(IoArgs),
    /// Trains an LSTM on every patient of a clean dataset.
    Train(TrainArgs),
    /// Forecasts every segment of a clean dataset (predictions.jsonl).
    Predict(PredictArgs),
    /// Scores predictions.jsonl.
    Evaluate(IoArgs),
    /// Patient-grouped k-fold cross-validation.
    Cv(CvArgs),
    /// Rebuilds report tables from cv, evaluate or predict output.
    Report(IoArgs),
    /// Trains on the whole internal dataset and evaluates on an external one.
    External(ExternalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Input directory
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Es,
    Lstm,
    External,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "es")]
    pub model: ModelKind,
    /// Adapter command line, run through `sh -c`.
    #[arg(long, value_name = "STRING")]
    pub adapter_cmd: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Clean dataset used only for the validation loss curve.
    #[arg(long, value_name = "DIR")]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// LSTM checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Clean training dataset: fits the scaler and fine-tunes an external model.
    #[arg(long, value_name = "DIR")]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExternalArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Clean external-validation dataset.
    #[arg(long, value_name = "DIR")]
    pub external: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Segment(_) => "segment",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Cv(_) => "cv",
            Command::Report(_) => "report",
            Command::External(_) => "external",
        }
    }

    pub fn out_dir(&self) -> &std::path::Path {
        match self {
            Command::Preprocess(a)
            | Command::Segment(a)
            | Command::Evaluate(a)
            | Command::Report(a) => &a.out,
            Command::Train(a) => &a.io.out,
            Command::Predict(a) => &a.io.out,
            Command::Cv(a) => &a.io.out,
            Command::External(a) => &a.io.out,
        }
    }
}
