use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpmpc_cli::commands::{self, CollectArgs, Globals, RunArgs};
use gpmpc_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gpmpc", version, about = "Learn a GP flow map and close the loop with MPC")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for collection, hyperparameter restarts and process noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect transitions from the simulated plant.
    Collect {
        /// Number of random samples (or on-policy steps).
        #[arg(long)]
        count: Option<usize>,
        /// Sampling period, s.
        #[arg(long)]
        dt: Option<f64>,
        /// Ward-linkage subsample size.
        #[arg(long)]
        cluster: Option<usize>,
    },
    /// Fit the GP and write the model bundle.
    Fit {
        /// Dataset CSV (default: train.csv, else transitions.csv in the output directory).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare the learned and true vector fields on a grid.
    Evalgrid {
        /// Model bundle (default: model.json in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Cells per grid axis.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run the closed loop against the simulated plant.
    Run {
        /// Model bundle (default: model.json in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Control steps to simulate.
        #[arg(long)]
        steps: Option<usize>,
        /// Dump the first step's linearizations as JSON.
        #[arg(long)]
        debug: bool,
    },
    /// Time policy steps at several training-set sizes.
    Bench {
        /// Dataset to subsample (default: transitions.csv in the output directory).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Take kernel hyperparameters and noise from this model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let cfg = ExperimentConfig::load(&path)?;
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out` in the config".into()))?;
    let g = Globals {
        out,
        seed: cli.seed,
        force: cli.force,
    };
    match cli.command {
        Command::Collect { count, dt, cluster } => commands::collect(&cfg, &g, &CollectArgs { count, dt, cluster }),
        Command::Fit { dataset } => commands::fit(&cfg, &g, dataset.as_deref()),
        Command::Evalgrid { model, resolution } => commands::evalgrid(&cfg, &g, model.as_deref(), resolution),
        Command::Run { model, steps, debug } => commands::run(&cfg, &g, &RunArgs { model, steps, debug }),
        Command::Bench { dataset, model } => commands::bench(&cfg, &g, dataset.as_deref(), model.as_deref()),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
