//! `gaze`: command-line front end for the gaze-direction pipeline.
//!
//! Exit status is 0 on success, 1 when the work itself fails (bad data,
//! divergence, corrupt model) and 2 for usage problems, including missing
//! input files.

mod cmd;
mod config;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

macro_rules! domain_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_errors!(
    gaze_core::cascade::CascadeError,
    gaze_core::cnn::CnnError,
    gaze_core::dataset::DatasetError,
    gaze_core::imaging::ImagingError,
    gaze_core::synth::SynthError,
    gaze_core::train::TrainError,
    gaze_core::bench::BenchError,
    std::io::Error
);

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "gaze", version, about = "Gaze-direction detection, training and benchmarking")]
pub struct Cli {
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic eye-pair dataset or full scenes.
    Synth(SynthArgs),
    /// Expand a manifest with jittered copies.
    Augment(AugmentArgs),
    /// Seeded train/test split of a manifest.
    Split(SplitArgs),
    /// Train a network on a manifest.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a model on a manifest.
    Eval(EvalArgs),
    /// Subject-grouped k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Face and eye boxes for each frame.
    Detect(DetectArgs),
    /// Gaze label for each frame.
    Infer(InferArgs),
    /// Per-stage latency over a set of frames.
    Bench(BenchArgs),
    /// Train a face or eye cascade on synthetic scenes.
    TrainCascade(TrainCascadeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Eyes,
    Scenes,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SynthKind::Eyes)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 30)]
    pub subjects: usize,
    #[arg(long, default_value_t = 5)]
    pub per_label: usize,
    /// Number of scenes for `--kind scenes`.
    #[arg(long, default_value_t = 40)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 159)]
    pub multiplier: usize,
    #[arg(long)]
    pub no_translate: bool,
    #[arg(long)]
    pub no_rotate: bool,
    #[arg(long)]
    pub no_brightness: bool,
    #[arg(long)]
    pub no_contrast: bool,
    #[arg(long)]
    pub no_flip: bool,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 6)]
    pub conv1: usize,
    #[arg(long, default_value_t = 2)]
    pub conv2: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Per-epoch `epoch,loss,val_accuracy` CSV; printed when unset.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Also train on a plain shuffled split and print both accuracies.
    #[arg(long)]
    pub compare_shuffle: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug, Clone)]
pub struct FrameArgs {
    /// Directory of PGM frames, a single PGM, or `-` for raw 8-bit frames on stdin.
    #[arg(long)]
    pub frames: PathBuf,
    /// Frame width for raw stdin frames.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DetectorArgs {
    #[arg(long)]
    pub face_model: PathBuf,
    #[arg(long)]
    pub eye_model: PathBuf,
    /// Smallest face width scanned, in pixels.
    #[arg(long, default_value_t = 96)]
    pub min_face: u32,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub detectors: DetectorArgs,
    #[command(flatten)]
    pub frames: FrameArgs,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub detectors: DetectorArgs,
    #[command(flatten)]
    pub frames: FrameArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub detectors: DetectorArgs,
    #[command(flatten)]
    pub frames: FrameArgs,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CascadeTarget {
    Face,
    Eye,
}

#[derive(Args, Debug)]
pub struct TrainCascadeArgs {
    #[arg(long, value_enum)]
    pub target: CascadeTarget,
    #[arg(long)]
    pub out: PathBuf,
    /// Training scenes; the recipe default when unset.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub max_stages: Option<usize>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
