//! `lesionmap`: synthetic data, preprocessing, training, evaluation and
//! Grad-CAM explanations from the command line.
//!
//! Exit status: 0 on success, 1 on operational failure, 2 on usage errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lesionmap", version, about = "Fundus lesion classification with Grad-CAM localisation maps")]
struct Cli {
    /// `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fundus set with lesion boxes.
    Synth(SynthArgs),
    /// Print the class distribution of a labels CSV.
    Stats(StatsArgs),
    /// Apply CLAHE and/or resizing to every image in a directory.
    Preprocess(PreprocessArgs),
    /// Stratified train/val/test split of a labels CSV.
    Split(SplitArgs),
    /// Train a model and write its weights.
    Train(TrainArgs),
    /// Evaluate weights on a labeled set and write a report.
    Eval(EvalArgs),
    /// Write a Grad-CAM overlay for one image.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Number of classes (2 to 5) [default: 5]
    #[arg(long)]
    classes: Option<usize>,
    /// Image side in pixels [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Apply contrast-limited adaptive histogram equalization.
    #[arg(long)]
    clahe: bool,
    /// Tile grid, `N` or `ROWSxCOLS` [default: 8]
    #[arg(long)]
    tiles: Option<String>,
    /// Clip limit as a multiple of the mean bin height [default: 2]
    #[arg(long)]
    clip: Option<f64>,
    /// Resize to N×N after equalization.
    #[arg(long, value_name = "N")]
    resize: Option<usize>,
    /// Write summed before/after luma histograms as `bin,before,after`.
    #[arg(long, value_name = "PATH")]
    hist_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
    /// Directory for train.csv, val.csv and test.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// [default: 0.8]
    #[arg(long)]
    train: Option<f64>,
    /// [default: 0.1]
    #[arg(long)]
    val: Option<f64>,
    /// [default: 0.1]
    #[arg(long)]
    test: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
    /// Model config file; defaults to DeskNet sized to the labels.
    #[arg(long, value_name = "FILE")]
    model_config: Option<PathBuf>,
    /// [default: 15]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Weight file; `<out>.model`, `<out>.run` and `<out>.epochs.csv` are written next to it.
    #[arg(long, value_name = "WEIGHTS")]
    out: Option<PathBuf>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// `sgd` or `adam` [default: sgd]
    #[arg(long)]
    optimizer: Option<String>,
    /// [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// Random horizontal flips [default: true]
    #[arg(long)]
    hflip: Option<bool>,
    /// Random vertical flips [default: true]
    #[arg(long)]
    vflip: Option<bool>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "WEIGHTS")]
    weights: Option<PathBuf>,
    /// CSV report path.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Model config; defaults to `<weights>.model`, then DeskNet.
    #[arg(long, value_name = "FILE")]
    model_config: Option<PathBuf>,
    /// Row name in the report [default: weight file stem]
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long, value_name = "FILE")]
    image: Option<PathBuf>,
    #[arg(long, value_name = "WEIGHTS")]
    weights: Option<PathBuf>,
    /// Target class [default: highest score]
    #[arg(long)]
    class: Option<usize>,
    /// Heatmap opacity in [0, 1] [default: 0.4]
    #[arg(long)]
    blend: Option<f64>,
    /// Overlay file, or a directory (trailing `/`) for overlay.png and heatmap.png.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Model config; defaults to `<weights>.model`, then DeskNet.
    #[arg(long, value_name = "FILE")]
    model_config: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LESIONMAP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("LESIONMAP_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("LESIONMAP_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(a, cfg),
        Command::Stats(a) => commands::stats(a, cfg),
        Command::Preprocess(a) => commands::preprocess(a, cfg),
        Command::Split(a) => commands::split(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Eval(a) => commands::eval(a, cfg),
        Command::Explain(a) => commands::explain(a, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<settings::UsageError>() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
