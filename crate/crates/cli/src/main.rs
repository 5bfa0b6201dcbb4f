//! `kinlmc`: experiment harness for the kinetic Langevin samplers.
//!
//! Exit status is 0 on success, 1 when a check fails (or the numerics do),
//! 2 on a usage or config error. `KLMC_THREADS` sets the worker count and
//! `KLMC_OUT_DIR` the directory relative output paths land in.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinetic_core::par::with_threads;

use commands::{AcceptArgs, BoundsArgs, CertifyArgs, CouplingArgs, LocalErrorArgs, SampleArgs};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "kinlmc", version, about = "Kinetic Langevin Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replica chains and record moment summaries.
    Sample(SampleArgs),
    /// One-step strong and weak errors over a step-size grid.
    LocalError(LocalErrorArgs),
    /// Integrate a shifted coupling.
    Coupling(CouplingArgs),
    /// Check the contraction rate of a shift schedule on a grid.
    Certify(CertifyArgs),
    /// Evaluate a bound calculator from a params file.
    Bounds(BoundsArgs),
    /// Run the acceptance suite.
    Accept(AcceptArgs),
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("KLMC_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("KLMC_THREADS must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> commands::Outcome {
    let threads = threads_from_env()?;
    let dispatch = || match &cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::LocalError(a) => commands::local_error_cmd(a),
        Command::Coupling(a) => commands::coupling(a),
        Command::Certify(a) => commands::certify(a),
        Command::Bounds(a) => commands::bounds(a),
        // the suite manages its own pools
        Command::Accept(a) => commands::accept(a, threads),
    };
    match (threads, &cli.command) {
        (Some(n), c) if !matches!(c, Command::Accept(_)) => with_threads(n, dispatch)?,
        _ => dispatch(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("kinlmc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
