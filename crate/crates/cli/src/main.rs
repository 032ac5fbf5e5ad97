//! `oed`: evaluate design criteria, validate them against Monte Carlo, run
//! greedy sensor selection and mesh-refinement studies on the heat model.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 configuration or I/O error,
//! 3 numerical failure.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::ExperimentConfig;
use error::CliError;
use report::Output;

#[derive(Parser)]
#[command(name = "oed", version, about = "Bayesian optimal experimental design on the 1D heat model")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Report directory (default: `out`, or `out` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Expected information gain, Bayes risk and the Hessian spectrum.
    Criteria,
    /// Every closed form against its Monte Carlo or deterministic oracle.
    Validate,
    /// Greedy sensor selection, optionally checked by enumeration.
    Design,
    /// Criteria across a sequence of grid sizes.
    Refine,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Criteria => "criteria",
            Command::Validate => "validate",
            Command::Design => "design",
            Command::Refine => "refine",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(config.seed);
    let dir = cli
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = Output::new(dir, cli.command.name(), seed, config.hash())?;
    let ctx = Context { config, seed };
    match cli.command {
        Command::Criteria => commands::criteria(&ctx, &out),
        Command::Validate => commands::validate(&ctx, &out),
        Command::Design => commands::design(&ctx, &out),
        Command::Refine => commands::refine(&ctx, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
