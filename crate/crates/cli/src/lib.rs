//! Command-line front end for the `oneshot-dpd` estimators.
//!
//! Each subcommand lives in [`commands`] and returns an [`commands::Output`]
//! holding both a text and a JSON rendering, so the binary only chooses one
//! and maps failures to exit codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod constraint;
pub mod dataset;
pub mod error;

use clap::{Parser, Subcommand};

use commands::{fit::FitArgs, power::PowerArgs, simulate::SimulateArgs, test::TestArgs, tune::TuneArgs, Format, Output};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "oneshot-dpd", version, about = "Robust estimation and testing for one-shot device data with two competing risks")]
pub struct Cli {
    /// Output format
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model by weighted minimum DPD (or maximum likelihood)
    Fit(FitArgs),
    /// Wald-type test of linear constraints on the parameters
    Test(TestArgs),
    /// Choose the tuning parameter over a grid
    Tune(TuneArgs),
    /// Approximate power, or the sample size reaching a target power
    Power(PowerArgs),
    /// Run a Monte Carlo study and write plot-ready series
    Simulate(SimulateArgs),
}

pub fn run(command: &Command) -> Result<Output> {
    match command {
        Command::Fit(a) => commands::fit::run(a),
        Command::Test(a) => commands::test::run(a),
        Command::Tune(a) => commands::tune::run(a),
        Command::Power(a) => commands::power::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
    }
}
