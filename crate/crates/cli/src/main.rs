//! `chromaholo`: dataset generation, estimator training, hologram optimization and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(name = "chromaholo", version, about = "Multi-color hologram optimization with estimated laser powers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a training corpus of optimized procedural targets.
    DatasetGen(DatasetGenArgs),
    /// Train the power estimator on a corpus.
    Train(TrainArgs),
    /// Optimize multi-color holograms for one target image.
    Optimize(OptimizeArgs),
    /// Predict a laser power matrix for one target image.
    Estimate(EstimateArgs),
    /// Cold versus warm-start convergence experiment.
    Eval(EvalArgs),
    /// Render a stored phase, real or complex blob to PNG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with flat dotted keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct OptimArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target brightness multiplier.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    subframes: Option<usize>,
    /// Comma-separated primaries in meters.
    #[arg(long, value_delimiter = ',')]
    wavelengths: Option<Vec<f64>>,
    #[arg(long)]
    anchor_wavelength: Option<f64>,
    /// SLM pixel pitch in meters.
    #[arg(long)]
    pitch: Option<f64>,
    /// Comma-separated plane distances in meters, near to far.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    plane_distances: Option<Vec<f64>>,
}

impl OptimArgs {
    fn layer(&self) -> RunConfig {
        RunConfig {
            steps: self.steps,
            seed: self.seed,
            scale: self.scale,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            subframes: self.subframes,
            wavelengths: self.wavelengths.clone(),
            anchor_wavelength: self.anchor_wavelength,
            pitch: self.pitch,
            plane_distances: self.plane_distances.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct DatasetGenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by dataset-gen.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Continue from a checkpoint (or a previous train output directory).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    optim: OptimArgs,
    /// Target image (sRGB PNG).
    target: Option<PathBuf>,
    /// 16-bit depth PNG; without it every pixel lies on the first plane.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Estimator checkpoint supplying the initial power matrix.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Also write holograms with the odd-row grating applied.
    #[arg(long)]
    export_grating: bool,
    /// Identity powers, phases only.
    #[arg(long)]
    single_color: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    target: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Held-out corpus directory.
    #[arg(long, conflicts_with = "procedural")]
    targets: Option<PathBuf>,
    /// Generate this many procedural held-out targets instead.
    #[arg(long)]
    procedural: Option<usize>,
    /// First seed of the procedural targets.
    #[arg(long)]
    target_seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Comma-separated steps at which to record metrics.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// Raw `.f32` blob with its JSON sidecar.
    input: Option<PathBuf>,
}

impl Common {
    fn layer(&self, command: &str) -> RunConfig {
        RunConfig { command: Some(command.into()), out: self.out.clone(), jobs: self.jobs, ..Default::default() }
    }
}

impl Command {
    /// Flag layer plus the optional config file.
    fn flags(&self) -> (RunConfig, Option<PathBuf>) {
        match self {
            Command::DatasetGen(a) => (
                RunConfig { count: a.count, resolution: a.resolution, ..a.optim.layer() }.over(a.common.layer("dataset-gen")),
                a.common.config.clone(),
            ),
            Command::Train(a) => (
                RunConfig {
                    corpus: a.corpus.clone(),
                    epochs: a.epochs,
                    train_seed: a.seed,
                    train_lr_start: a.lr_start,
                    train_lr_end: a.lr_end,
                    batch_size: a.batch_size,
                    val_fraction: a.val_fraction,
                    resume: a.resume.clone(),
                    ..a.common.layer("train")
                },
                a.common.config.clone(),
            ),
            Command::Optimize(a) => (
                RunConfig {
                    target: a.target.clone(),
                    depth: a.depth.clone(),
                    model: a.warm_start.clone(),
                    export_grating: a.export_grating.then_some(true),
                    single_color: a.single_color.then_some(true),
                    ..a.optim.layer()
                }
                .over(a.common.layer("optimize")),
                a.common.config.clone(),
            ),
            Command::Estimate(a) => (
                RunConfig { model: a.model.clone(), target: a.target.clone(), ..a.common.layer("estimate") },
                a.common.config.clone(),
            ),
            Command::Eval(a) => (
                RunConfig {
                    model: a.model.clone(),
                    targets: a.targets.clone(),
                    procedural: a.procedural,
                    target_seed: a.target_seed,
                    resolution: a.resolution,
                    checkpoints: a.checkpoints.clone(),
                    ..a.optim.layer()
                }
                .over(a.common.layer("eval")),
                a.common.config.clone(),
            ),
            Command::Render(a) => (RunConfig { input: a.input.clone(), ..a.common.layer("render") }, a.common.config.clone()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (flags, file) = cli.command.flags();
    let result = match &cli.command {
        Command::DatasetGen(_) => commands::dataset_gen(flags, file.as_deref()),
        Command::Train(_) => commands::train(flags, file.as_deref()),
        Command::Optimize(_) => commands::optimize(flags, file.as_deref()),
        Command::Estimate(_) => commands::estimate(flags, file.as_deref()),
        Command::Eval(_) => commands::eval(flags, file.as_deref()),
        Command::Render(_) => commands::render(flags, file.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
