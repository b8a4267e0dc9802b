use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use factm_cli::commands::{self, EvaluateArgs, FitArgs, RotateArgs, SimulateArgs};
use factm_cli::error::CliError;

#[derive(Parser)]
#[command(name = "factm", version, about = "Multi-view factor analysis with a sentence-level correlated topic model")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FACTM_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus its ground truth.
    Simulate {
        /// Scenario 1-6; omit for the baseline design.
        #[arg(long)]
        scenario: Option<u32>,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a dataset described by a manifest.
    Fit {
        /// manifest.json
        #[arg(long)]
        data: PathBuf,
        /// JSON with `hyperparams` and `fit` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Rotate fitted factors towards sample-level features.
    Rotate {
        /// state.bin or a fit output directory.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a fit against simulated ground truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { scenario, level, seed, out } => {
            commands::run_simulate(&SimulateArgs { scenario, level, seed, out })
        }
        Command::Fit { data, config, out, seed, restarts } => {
            commands::run_fit(&FitArgs { data, config, out, seed, restarts })
        }
        Command::Rotate { state, features, out } => commands::run_rotate(&RotateArgs { state, features, out }),
        Command::Evaluate { truth, fit, out } => commands::run_evaluate(&EvaluateArgs { truth, fit, out }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
