use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod responses;

use responses::ScaleSource;

/// Skeleton detection with scale-associated side outputs.
#[derive(Debug, Parser)]
#[command(name = "skelnet", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Shapes {
    Mixed,
    Ribbons,
    Ellipses,
    Polygons,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the effective configuration.
    Config,
    /// Generate a synthetic dataset with manifest and cached targets.
    Datagen(DatagenArgs),
    /// Train a network on the training split.
    Train(TrainArgs),
    /// Run a checkpoint on images and store responses and scales.
    Infer(InferArgs),
    /// Precision/recall evaluation of stored responses.
    Eval(EvalArgs),
    /// Rebuild object masks from skeletons and score them.
    Segment(SegmentArgs),
    /// Rescore box proposals by skeleton-segment coverage.
    Rescore(RescoreArgs),
    /// Plot PR or loss curves as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Output directory (default: paths.dataset).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_enum)]
    pub shapes: Option<Shapes>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (default: paths.dataset).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write (default: paths.checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss log (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Classification only (same as --lambda 0).
    #[arg(long, conflicts_with = "lambda")]
    pub fsds: bool,
    /// Train on the first N training samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset whose split is processed.
    #[arg(long, conflicts_with = "images")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Individual gray PNG images; ids are file stems.
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Output directory (default: paths.outputs/responses).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write PNG overlays colored by predicted scale.
    #[arg(long)]
    pub overlay: bool,
    /// Response threshold for overlays.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Response directory (default: paths.outputs/responses).
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Output directory (default: paths.outputs/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Evaluation summary whose best threshold is used.
    #[arg(long, conflicts_with = "threshold")]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f32>,
    #[arg(long, value_enum, default_value = "auto")]
    pub scale_source: ScaleSource,
    /// Dataset for scoring against ground-truth objects.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Output directory (default: paths.outputs/segments).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    /// CSV with header x,y,w,h,score.
    #[arg(long)]
    pub proposals: PathBuf,
    /// Segment label PNG written by `segment`.
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth boxes (CSV x,y,w,h) for a detection-rate curve.
    #[arg(long, requires = "detection_rate")]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub detection_rate: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// PR curve CSVs from `eval`.
    #[arg(long, required_unless_present = "loss")]
    pub pr: Vec<PathBuf>,
    /// Legend labels, one per curve (default: parent directory names).
    #[arg(long)]
    pub label: Vec<String>,
    /// Loss CSV from `train`.
    #[arg(long, conflicts_with = "pr")]
    pub loss: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::Context::new(&cli.global).and_then(|ctx| match cli.command {
        Command::Config => commands::config(&ctx),
        Command::Datagen(a) => commands::datagen(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Segment(a) => commands::segment(&ctx, a),
        Command::Rescore(a) => commands::rescore(&ctx, a),
        Command::Plot(a) => commands::plot(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
