//! `dsur`: generate synthetic scenario data, fit the deep surrogate, sample
//! predictive intervals, score predictions, and run scenario sweeps.
//!
//! Exit codes follow the error grouping of the core crate: 2 for
//! configuration/usage problems, 3 for numeric failures (divergent training,
//! singular systems), 4 for malformed files or model-version mismatches.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use dsur_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "dsur",
    version,
    about = "Deep surrogate emulator for spatial simulation output"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario dataset plus its truth sidecar.
    Generate(commands::GenerateArgs),
    /// Fit the surrogate on a generated dataset.
    Train(commands::TrainArgs),
    /// Sample predictive summaries for the held-out simulations.
    Predict(commands::PredictArgs),
    /// Score a predictions file against held-out truth.
    Eval(commands::EvalArgs),
    /// Run a scenario-by-method sweep and emit a results table.
    Bench(commands::BenchArgs),
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Shape { .. } | Error::Io(_) => 2,
        Error::Numeric(_) => 3,
        Error::Format(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
