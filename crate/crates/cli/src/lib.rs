//! Command-line front end for the DES-LOC simulator: run experiments from
//! JSON configs, compare synchronization strategies and evaluate the
//! wall-clock cost model.

pub mod commands;
pub mod config;
pub mod methods;
pub mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "desloc", version, about = "Simulate desynchronized low-communication optimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and stream its metrics.
    Run(commands::RunArgs),
    /// Print the communication and wall-clock cost model.
    Cost(commands::CostArgs),
    /// Run several synchronization strategies on one config and rank them.
    Compare(commands::CompareArgs),
}

/// Exit status for a failed command: 3 for divergence, 2 for a bad config,
/// 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    match err.downcast_ref::<desloc::Error>() {
        Some(desloc::Error::Divergence { .. }) => ExitCode::from(3),
        Some(desloc::Error::InvalidConfig { .. }) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run(args) => commands::run(args),
        Command::Cost(args) => commands::cost(args),
        Command::Compare(args) => commands::compare(args),
    }
}
