//! `aescore`: train the B-family score networks, rebalance imbalanced
//! training sets, fuse probability tables, evaluate predictions, and render
//! attention overlays. Every run takes its settings from flags, optionally
//! backed by a flat `key=value` config file (flags win), and echoes the
//! merged result into the output directory.

mod commands;
mod config;

use std::path::PathBuf;

use aescore::attention::ChannelSelector;
use aescore::Error;
use clap::{Args, Parser, Subcommand};

use config::ConfigFile;

#[derive(Parser)]
#[command(name = "aescore", version, about = "Aesthetic score CNNs: training, rebalancing, ensembling, attention maps")]
struct Cli {
    /// Flat key=value file supplying defaults for the chosen command's
    /// flags; explicit flags win, unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network variant from scratch on a labeled image directory
    Train(TrainArgs),
    /// Drop low-likelihood over-represented samples and retrain, keeping the
    /// round with the best validation macro F1
    Rsrl(RsrlArgs),
    /// Write class probabilities and predicted scores for a dataset
    Predict(PredictArgs),
    /// Grid-search the fusion weight between two probability tables
    EnsembleSweep(SweepArgs),
    /// Score predictions against ground truth (8 classes, or low/high)
    Eval(EvalArgs),
    /// Render attention overlays and map dumps for every image
    Attention(AttentionArgs),
    /// Generate a deterministic synthetic labeled dataset
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory holding the images and labels.csv (required)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory [default: train-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Network variant: B1, B2, B3 or B4 [default: B4]
    #[arg(long, value_name = "NAME")]
    pub variant: Option<String>,
    /// Training epochs [default: 30]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Samples per batch, at least 2 [default: 8]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// SGD learning rate [default: 0.01]
    #[arg(long, value_name = "X")]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long, value_name = "X")]
    pub momentum: Option<f64>,
    /// Root seed; initialization and shuffling derive from it [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct RsrlArgs {
    /// Training dataset directory with labels.csv (required)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Validation dataset directory, ids disjoint from data; alternative
    /// to --val-fraction
    #[arg(long, value_name = "DIR")]
    pub val: Option<PathBuf>,
    /// Hold out this fraction of --data for validation (stratified by
    /// score, seeded by --seed); alternative to --val
    #[arg(long, value_name = "X")]
    pub val_fraction: Option<f64>,
    /// Output directory [default: rsrl-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Starting checkpoint; mutually exclusive with --variant
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    /// Fresh network variant when no --init is given [default: B4]
    #[arg(long, value_name = "NAME")]
    pub variant: Option<String>,
    /// Rebalancing rounds; 0 keeps the starting network [default: 5]
    #[arg(long, value_name = "K")]
    pub iterations: Option<usize>,
    /// Fraction of each over-represented class dropped per round [default: 0.1]
    #[arg(long, value_name = "X")]
    pub drop_fraction: Option<f64>,
    /// Training epochs per round [default: 30]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Samples per batch, at least 2 [default: 8]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// SGD learning rate [default: 0.01]
    #[arg(long, value_name = "X")]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long, value_name = "X")]
    pub momentum: Option<f64>,
    /// Root seed; initialization and shuffling derive from it [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Trained checkpoint to score with (required)
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Directory holding the images and labels.csv (required)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory [default: predict-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Inference batch size [default: 8]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// First probability table, csv (required)
    #[arg(long, value_name = "FILE")]
    pub table_a: Option<PathBuf>,
    /// Second probability table, csv (required)
    #[arg(long, value_name = "FILE")]
    pub table_b: Option<PathBuf>,
    /// Ground-truth path,score csv covering every table id (required)
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Output directory [default: sweep-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Weight grid step; must divide 1 evenly [default: 0.1]
    #[arg(long, value_name = "X")]
    pub step: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Ground-truth path,score csv (required)
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Predicted path,score csv over the same ids (required)
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Also write report.txt into this directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Collapse scores to low/high quality classes before scoring
    #[arg(long)]
    pub binarize: bool,
    /// Scores below this are low quality when binarizing [default: 5]
    #[arg(long, value_name = "N")]
    pub threshold: Option<u8>,
}

#[derive(Args)]
pub struct AttentionArgs {
    /// Trained checkpoint (required)
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Directory holding the images and labels.csv (required)
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory [default: attention-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Channel choice statistic: mean, sum or max [default: mean]
    #[arg(long, value_name = "STAT")]
    pub selector: Option<ChannelSelector>,
    /// Overlay opacity in [0, 1] [default: 0.5]
    #[arg(long, value_name = "X")]
    pub alpha: Option<f64>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory [default: synth-out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of images [default: 200]
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Square image resolution, 32..=4096 [default: 192]
    #[arg(long, value_name = "N")]
    pub resolution: Option<usize>,
    /// Root seed [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Class skew as score:fraction pairs, e.g. 5:0.8,2:0.1
    #[arg(long, value_name = "SPEC")]
    pub imbalance: Option<String>,
}

fn run(cli: Cli) -> aescore::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::empty(),
    };
    match cli.command {
        Command::Train(args) => commands::cmd_train(args, &mut cfg),
        Command::Rsrl(args) => commands::cmd_rsrl(args, &mut cfg),
        Command::Predict(args) => commands::cmd_predict(args, &mut cfg),
        Command::EnsembleSweep(args) => commands::cmd_ensemble_sweep(args, &mut cfg),
        Command::Eval(args) => commands::cmd_eval(args, &mut cfg),
        Command::Attention(args) => commands::cmd_attention(args, &mut cfg),
        Command::Synth(args) => commands::cmd_synth(args, &mut cfg),
    }
}

/// 2: the request itself is malformed. 3: inputs on disk are missing or
/// unusable. 4: the computation failed numerically.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        Error::Shape(_) | Error::Data(_) | Error::Format(_) | Error::Io { .. } => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
