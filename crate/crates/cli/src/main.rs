//! `factorlens` command-line driver.
//!
//! Exit codes: 0 success, 2 user error (bad flags, config, data or bundle),
//! 3 environment error (unwritable output, port in use).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "factorlens", version, about = "Train, explain and evaluate linear factor explainers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validated modeling study plus heldout summary and model bundle.
    Study(StudyArgs),
    /// Refit Subglobal and Incremental over a percentile grid of thresholds.
    Sweep(SweepArgs),
    /// Explain one instance with a bundled explainer.
    Explain(ExplainArgs),
    /// Serve a bundle over the local HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// Dataset config JSON.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run config JSON; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of trees in the forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Fixed Incremental lambda instead of automatic selection.
    #[arg(long)]
    lambda: Option<f64>,
    /// Overwrite existing artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, clap::Args)]
struct StudyArgs {
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Percentile grid `start:end:step`.
    #[arg(long)]
    grid: Option<String>,
    /// Feature to sweep (name or 0-based index); defaults to the learned split feature.
    #[arg(long)]
    feature: Option<String>,
    /// Reuse a trained bundle instead of training inline.
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ExplainArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// global, subglobal, incremental or local.
    #[arg(long)]
    xai: String,
    /// Comma-separated feature values in bundle order.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    /// Factor override `name=value`; repeatable. Use `adjustment` for the intercept.
    #[arg(long = "override", value_name = "NAME=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Text,
    Json,
    Both,
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Study(a) => commands::study(&a.train),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.code)
        }
    }
}
