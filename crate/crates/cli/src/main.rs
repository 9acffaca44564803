//! `ergorate`: JSON-configured runs over the ergorate library.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for numerical failures.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "ergorate", version, about = "Wasserstein convergence-rate experiments for Markov processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate paths on a time grid.
    Simulate,
    /// Distance between two empirical measures stored as CSV.
    Wdist,
    /// Check a Foster-Lyapunov drift inequality on a grid.
    Driftcheck,
    /// Synchronous-coupling contraction estimate.
    Couple,
    /// Constructive lower-bound curve.
    Lower,
    /// Rate transfer under a subordinator.
    Subordinate,
    /// Fit a rate to a CSV column.
    Ratefit,
    /// Full experiment: simulate, measure distances, fit and bracket.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let ctx = match commands::Context::load(path, cli.seed, cli.out_dir.clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Wdist => commands::wdist(&ctx),
        Command::Driftcheck => commands::driftcheck(&ctx),
        Command::Couple => commands::couple(&ctx),
        Command::Lower => commands::lower(&ctx),
        Command::Subordinate => commands::subordinate(&ctx),
        Command::Ratefit => commands::ratefit(&ctx),
        Command::Run => commands::run(&ctx),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
