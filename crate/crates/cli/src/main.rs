// SPDX-License-Identifier: Apache-2.0

//! `covforge`: batch driver for synthesis, export, dedup and evaluation.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 finished but the
//! simulator budget ran out (partial outputs are kept).

mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "covforge", version, about = "Coverage-guided data engine for testbench generation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Job configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides [run] seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides [run] workers.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Simulator-call budget; overrides [budget] simulator_calls.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic synthetic corpus with scripted models.
    Fixture(commands::FixtureArgs),
    /// Build the stage-k dataset.
    Synth(commands::SynthArgs),
    /// Export a saved dataset as SFT JSONL.
    Export(commands::ExportArgs),
    /// Pool several stage datasets (naive augmentation baseline).
    Union(commands::UnionArgs),
    /// Remove corpus repos that overlap a benchmark.
    Dedup(commands::DedupArgs),
    /// Evaluate a model under the direct or agentic protocol.
    Eval(commands::EvalArgs),
    /// Render metrics files as a comparison table.
    Report(report::ReportArgs),
}

pub enum Outcome {
    Done,
    Truncated,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = &cli.global;
    let result = match cli.command {
        Command::Fixture(a) => commands::fixture(g, a),
        Command::Synth(a) => commands::synth(g, a),
        Command::Export(a) => commands::export(g, a),
        Command::Union(a) => commands::union(g, a),
        Command::Dedup(a) => commands::dedup(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Truncated) => {
            eprintln!("warning: simulator budget exhausted; outputs are partial");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
