//! `icl-lab`: deterministic command-line runner for the kernelized-
//! attention laboratory. Every command writes a CSV results file plus a
//! JSON metadata sidecar and is bit-reproducible given (config, seed),
//! independent of the thread count.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 numerical
//! failure (divergence, singular system, non-finite values).

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::RunSummary;
use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "icl-lab",
    version,
    about = "Numerical experiments linking attention's in-context inference to gradient descent on a dual model",
    after_help = "Relative --out paths are placed under $ICL_LAB_OUT_DIR when it is set.\n\
                  A JSON config file (--config) supplies defaults; explicit flags win."
)]
struct Cli {
    /// JSON config file; its `params` keys mirror the command's flags.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Worker threads for parallel sections (default: all cores). Outputs
    /// are byte-identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that attention's in-context output equals the trained dual
    /// model's prediction, seed by seed.
    Equivalence(commands::equivalence::Params),
    /// Sweep the random-feature dimension and measure attention-matrix
    /// approximation error.
    Approx(commands::approx::Params),
    /// Train one (modified) kernelized attention model by plain SGD.
    Train(commands::train::Params),
    /// Train several modification variants on identical data streams.
    Sweep(commands::sweep::Params),
    /// Estimate the rank upper bound of the ReLU-masked feed-forward map.
    RankBound(commands::rank_bound::Params),
    /// Generalization-bound surrogate and empirical generalization gap.
    GenBound(commands::gen_bound::Params),
    /// Dump one dual-model construction in detail.
    DualInspect(commands::dual_inspect::Params),
}

fn run(cli: Cli) -> Result<RunSummary> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool setup failed: {e}")))?;
    }
    let cfg = cli.config.as_deref().map(config::load).transpose()?;
    let cfg = cfg.as_ref();
    match cli.command {
        Command::Equivalence(p) => commands::equivalence::run(p, cfg),
        Command::Approx(p) => commands::approx::run(p, cfg),
        Command::Train(p) => commands::train::run(p, cfg),
        Command::Sweep(p) => commands::sweep::run(p, cfg),
        Command::RankBound(p) => commands::rank_bound::run(p, cfg),
        Command::GenBound(p) => commands::gen_bound::run(p, cfg),
        Command::DualInspect(p) => commands::dual_inspect::run(p, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("wrote {} rows to {}", summary.rows, summary.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
