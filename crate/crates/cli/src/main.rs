//! `ngdf` command-line driver. Exit codes: 0 success, 2 usage or
//! configuration error, 3 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ManifoldKind;

#[derive(Debug, Parser)]
#[command(name = "ngdf", version, about = "Grasp-distance field training, evaluation and planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and label a supervised dataset.
    GenData(GenDataArgs),
    /// Fit a field model to a dataset.
    Train(TrainArgs),
    /// Optimize gripper poses onto the field's zero level set.
    Levelset(LevelsetArgs),
    /// Plan one scene, or the randomized scene suite.
    Plan(PlanArgs),
    /// Run the plan suite under every step-mode and init-mode combination.
    Ablate(SuiteArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub manifold: Option<ManifoldKind>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of queries.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Sampling ball radius in meters.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Oracle sample count.
    #[arg(long)]
    pub density: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Rotation-augmentation probability.
    #[arg(long)]
    pub aug_p: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldKind {
    /// The trained checkpoint.
    Model,
    /// The exact nearest-grasp oracle.
    Oracle,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    pub field: FieldKind,
}

#[derive(Debug, Args)]
pub struct LevelsetArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub field: FieldArgs,
    /// Kinematic chain TOML; the built-in 7-DoF arm by default.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Scene TOML; plans this scene alone instead of the suite.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

fn configure_threads() -> Result<(), commands::Failure> {
    let Ok(value) = std::env::var("NGDF_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| commands::Failure::Usage(format!("NGDF_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| commands::Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::GenData(args) => commands::gen_data(&args),
        Command::Train(args) => commands::train(&args),
        Command::Levelset(args) => commands::levelset(&args),
        Command::Plan(args) => commands::plan(&args),
        Command::Ablate(args) => commands::ablate(&args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
