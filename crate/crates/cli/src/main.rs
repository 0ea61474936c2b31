//! `subgrid`: data generation, training, prediction and evaluation of
//! neural subgrid-scale sources.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{absolute, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "subgrid", version, about = "Neural subgrid-scale sources for low-order solvers")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: paths.out_dir, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates reference trajectories and a checksummed manifest.
    Generate,
    /// Trains the source network on the generated data.
    Train {
        /// Continues from a checkpoint, keeping its epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rolls out the low-order model, augmented when a checkpoint is given.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the prediction timestep.
        #[arg(long)]
        dt: Option<f64>,
        /// Output trajectory (default: <out>/prediction.sgnt).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Writes error and spectrum reports of a prediction.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Reference trajectory (default: the configured dataset trajectory).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Relative errors over a grid of prediction timesteps.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Wall-clock timing of solver variants.
    Time {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compares reverse-mode gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        windows: usize,
        /// Entries checked per parameter tensor.
        #[arg(long, default_value_t = 16)]
        entries: usize,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let out = match (&cli.out, &cfg.paths.out_dir) {
        (Some(o), _) => absolute(o)?,
        (None, Some(o)) => o.clone(),
        (None, None) => absolute(&PathBuf::from("out"))?,
    };
    let data = match (&cfg.paths.data_dir, std::env::var_os("SGN_DATA_DIR")) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => absolute(&PathBuf::from(d))?,
        (None, None) => out.join("data"),
    };
    Ok(Context {
        config_sha256: manifest::sha256_file(path)?,
        seed: cli.seed.unwrap_or(cfg.seed),
        cfg,
        out,
        data,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let ctx = context(&cli)?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train { resume } => commands::train(&ctx, resume),
        Command::Predict { checkpoint, dt, output } => commands::predict(&ctx, checkpoint, dt, output),
        Command::Evaluate { pred, reference } => commands::evaluate(&ctx, &pred, reference),
        Command::Sweep { checkpoint } => commands::sweep(&ctx, checkpoint),
        Command::Time { checkpoint } => commands::time(&ctx, checkpoint),
        Command::Gradcheck {
            checkpoint,
            windows,
            entries,
            h,
        } => commands::gradcheck(&ctx, checkpoint, windows, entries, h),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
