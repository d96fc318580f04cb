mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use varigan::datakit::ViewLabel;
use varigan::trainer::{Ablation, Stage};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] varigan::Error),

    #[error("bad config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),
}

#[derive(Parser, Debug)]
#[command(
    name = "varigan",
    version,
    about = "Coarse-to-fine multi-view image generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic grouped multi-view dataset.
    GenData(GenDataArgs),
    /// Train the coarse or the fine stage.
    Train(TrainArgs),
    /// Generate a grid of [input, coarse, fine] rows for one condition image.
    Sample(SampleArgs),
    /// Score trained checkpoints on the held-out split.
    Eval(EvalArgs),
    /// Write coarse-generator feature maps as tiled PNGs.
    DumpFeatures(DumpArgs),
    /// Train the shape classifier used for the Inception Score.
    TrainClassifier(ClassifierArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Coarse,
    Fine,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Coarse => Stage::Coarse,
            StageArg::Fine => Stage::Fine,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ViewArg {
    Front,
    Side,
    Back,
}

impl From<ViewArg> for ViewLabel {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Front => ViewLabel::Front,
            ViewArg::Side => ViewLabel::Side,
            ViewArg::Back => ViewLabel::Back,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs for the selected stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// Repeatable: no_v, no_unet, no_l1, no_cdisc.
    #[arg(long = "ablation", value_parser = parse_ablation)]
    pub ablations: Vec<Ablation>,
    #[arg(long)]
    pub desk_scale: Option<bool>,
    /// Full-size models and 500-epoch schedule.
    #[arg(long, conflicts_with = "desk_scale")]
    pub full_scale: bool,
    #[arg(long)]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub non_saturating: bool,
    /// Continue from an existing checkpoint of this stage in --ckpt.
    #[arg(long)]
    pub resume: bool,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: varigan::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub cond: PathBuf,
    /// Target view to generate.
    #[arg(long, value_enum)]
    pub view: ViewArg,
    /// View of the condition image (defaults to its file stem when that names a view).
    #[arg(long, value_enum)]
    pub cond_view: Option<ViewArg>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Held-out groups of the training split.
    Test,
    /// Every group under --data.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SsimModeArg {
    Global,
    Windowed,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of a trained classifier, or `fixture` to train one on the training split.
    #[arg(long)]
    pub classifier: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub per_sample: bool,
    #[arg(long, value_enum, default_value = "global")]
    pub ssim_mode: SsimModeArg,
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    #[arg(long)]
    pub splits: Option<usize>,
    /// Seed of the prior noise used for generation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub cond: PathBuf,
    #[arg(long, value_enum)]
    pub view: ViewArg,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::DumpFeatures(a) => commands::dump_features(&a),
        Command::TrainClassifier(a) => commands::train_classifier(&a),
    };
    match result {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
