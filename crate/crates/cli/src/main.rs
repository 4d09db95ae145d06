//! `andor`: extract AND-OR interaction spectra from masked-output tables,
//! summarize them per order, measure train/test generalization, detect the
//! two-phase training dynamics, and run the built-in toy trainer.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Default output directory when --out is not given.
const OUT_ENV: &str = "ANDOR_OUT";

#[derive(Parser)]
#[command(name = "andor", version, about = "AND-OR interaction decomposition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose table files into spectrum files plus a summary.
    Extract(commands::ExtractArgs),
    /// Aggregate spectra into a per-order strength CSV.
    Orders(commands::OrdersArgs),
    /// Per-order train/test Jaccard similarity from a series manifest.
    Jaccard(commands::JaccardArgs),
    /// Phase-transition report and per-epoch CSV from a series manifest.
    Dynamics(commands::DynamicsArgs),
    /// Self-checks: transforms, matching, stability, noise baselines.
    Verify(commands::VerifyArgs),
    /// Train the built-in toy model and emit tables plus a manifest.
    TrainToy(commands::TrainToyArgs),
    /// Merge analysis outputs of a run into plot-ready CSV panels.
    EmitPlots(commands::EmitPlotsArgs),
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(args) => commands::extract(args),
        Command::Orders(args) => commands::orders(args),
        Command::Jaccard(args) => commands::jaccard(args),
        Command::Dynamics(args) => commands::dynamics(args),
        Command::Verify(args) => commands::verify(args),
        Command::TrainToy(args) => commands::train_toy(args),
        Command::EmitPlots(args) => commands::emit_plots(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
