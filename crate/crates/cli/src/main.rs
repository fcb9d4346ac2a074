//! `drn`: simulate data, fit models, evaluate, explain and tune.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use drn_core::models::ModelKind;

use crate::config::{Config, Overrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "drn", version, about = "Distributional refinement network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` and the data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated subset of glm,cann,mdn,ddr,drn.
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,

    /// Worker threads for parallel scoring and explanation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or preprocess data and write the splits.
    Simulate,
    /// Fit the configured models.
    Fit,
    /// Score fitted models and write metrics and plot data.
    Evaluate,
    /// Kernel SHAP attributions for the configured requests.
    Explain,
    /// Random hyperparameter search for one model family.
    RandomSearch {
        /// Number of trials; overrides `random_search.budget`.
        #[arg(long)]
        budget: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <FILE> is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        models: cli.models,
        output: cli.out,
    };
    let config = Config::load(&path, &overrides)?;
    log::debug!("config hash {}", config.hash());
    match cli.command {
        Command::Simulate => commands::simulate::run(&config),
        Command::Fit => commands::fit::run(&config),
        Command::Evaluate => commands::evaluate::run(&config),
        Command::Explain => commands::explain::run(&config),
        Command::RandomSearch { budget } => commands::search::run(&config, budget),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
