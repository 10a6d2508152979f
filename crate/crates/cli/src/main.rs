//! `graspformer`: dataset generation and conversion, training, evaluation,
//! safe-force inference, attention visualization, and a forward-pass
//! throughput benchmark, in one binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graspformer_core::error::Error;

#[derive(Parser)]
#[command(name = "graspformer", version, about = "Spatiotemporal transformers for visuo-tactile grasping", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth.
    GenSynthetic(commands::gen::GenArgs),
    /// Convert a directory of PNG frame folders into a slip dataset.
    ConvertSlip(commands::convert::ConvertArgs),
    /// Train a model and write checkpoints, logs, and metrics.
    Train(commands::train::TrainArgs),
    /// Evaluate checkpoints on a dataset and print one row per model.
    Eval(commands::eval::EvalArgs),
    /// Search the candidate force thresholds for a safe grasp.
    InferForce(commands::infer::InferArgs),
    /// Record attention, roll it out, and render heatmaps and profiles.
    AttentionViz(commands::viz::VizArgs),
    /// Time encoder forward passes (reported, no pass/fail target).
    Bench(commands::bench::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(args) => commands::gen::run(args),
        Command::ConvertSlip(args) => commands::convert::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::InferForce(args) => commands::infer::run(args),
        Command::AttentionViz(args) => commands::viz::run(args),
        Command::Bench(args) => commands::bench::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}
