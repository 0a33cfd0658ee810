//! `fwdc`: scenario-driven runs of the simulation, solver and verification
//! pipelines. Exit status 0 means every requested verification passed.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] forward_contract::Error),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(name = "fwdc", version, about = "Forward-performance contracts: simulate, solve, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (flat TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flat Monte-Carlo ensemble size, overriding the config.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force_overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Brownian, asset and wealth paths.
    Simulate,
    /// Utility field and recovered strategy on the first path.
    SolveSpde,
    /// Closed-form constants, contract description and payout table.
    BsClosedForm,
    /// The Monte-Carlo verification suite.
    Verify,
    /// Everything above.
    All,
}

fn scenario(cli: &Cli) -> Result<Scenario, CliError> {
    let mut s = match &cli.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(paths) = cli.paths {
        s.paths = paths;
    }
    if let Some(out) = &cli.out {
        s.output_dir = out.clone();
    }
    s.validate()?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = scenario(&cli).and_then(|s| run::run(cli.command, &s, cli.force_overwrite));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("fwdc: some verifications failed; see summary.txt");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("fwdc: {e}");
            ExitCode::from(2)
        }
    }
}
