//! Command-line driver. [`run`] executes one parsed command; the binary only
//! maps its outcome to an exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

pub use commands::{friction_report, segmentation_report, FrictionReport, SegmentationReport};

/// Exit code for invalid flags, configuration or inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures after the inputs were accepted.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<fricvae::Error> for CliError {
    fn from(e: fricvae::Error) -> Self {
        use fricvae::Error::*;
        let code = match e {
            Config(_) | Argument(_) | Checkpoint(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "fricvae",
    version,
    about = "Probabilistic road segmentation and friction estimation"
)]
pub struct Cli {
    /// Seed applied to every config section; overrides the config file.
    #[arg(long, global = true, env = "FRICVAE_SEED")]
    pub seed: Option<u64>,

    /// Base directory for relative --data paths.
    #[arg(long, global = true, env = "FRICVAE_DATA_ROOT")]
    pub data_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with train/val manifests.
    Generate(GenerateArgs),
    /// Label recorded frames with μ from a signal log.
    Ingest(IngestArgs),
    /// Train a segmentation, friction-latent or end-to-end model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled split.
    Eval(EvalArgs),
    /// Predict a mask, uncertainty map and μ for one image.
    Infer(InferArgs),
    /// Tabulate and plot best validation RMSE across training runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Config file; only its `data.*` keys are used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of scenes in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub signals: PathBuf,
    /// Manifest to write; frame paths are stored relative to its directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Largest allowed frame/signal time offset in seconds.
    #[arg(long, default_value_t = fricvae::ground_truth::DEFAULT_TOLERANCE_S)]
    pub tolerance: f64,
    /// Take the largest μ within this window (seconds) around each match.
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long, default_value_t = fricvae::ground_truth::GRAVITY)]
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cvae,
    FrictionLatent,
    #[value(name = "end2end")]
    EndToEnd,
}

impl ModelArg {
    pub fn name(self) -> &'static str {
        match self {
            ModelArg::Cvae => "cvae",
            ModelArg::FrictionLatent => "friction-latent",
            ModelArg::EndToEnd => "end2end",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory holding train.jsonl (and optionally val.jsonl), or
    /// a single manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained segmentation checkpoint; required for friction-latent.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory (its val.jsonl is used) or a manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report to write.
    #[arg(long)]
    pub report: PathBuf,
    /// Prior samples averaged per image for segmentation.
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Directory for mask.png, uncertainty.png and result.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `name=path/to/log.csv`, repeatable.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context {
        seed: cli.seed,
        data_root: cli.data_root,
    };
    match cli.command {
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Compare(a) => commands::compare(a),
    }
}

pub(crate) struct Context {
    seed: Option<u64>,
    data_root: Option<PathBuf>,
}

impl Context {
    fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}
