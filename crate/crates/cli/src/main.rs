mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::BackendKind;

#[derive(Debug, Parser)]
#[command(
    name = "synthproof",
    version,
    about = "Synthetic theorem-proof data pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset store directory.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Scripted completions for the mock backend.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    /// Print the execution plan and exit without side effects.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Continue a previous, possibly interrupted, run.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Structured JSON log destination.
    #[arg(long, global = true)]
    pub log_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Translate informal problems into formal statements.
    Formalize {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        iteration: u32,
    },
    /// Score statements and reject inconsistent hypotheses.
    Filter {
        #[arg(long, default_value_t = 0)]
        iteration: u32,
        /// Attempts at proving False from the hypotheses.
        #[arg(long)]
        false_budget: Option<u32>,
    },
    /// Dual proof search over queued statements.
    Prove {
        #[arg(long, default_value_t = 0)]
        iteration: u32,
        /// Attempts per polarity.
        #[arg(long, short = 'k')]
        budget: Option<u32>,
    },
    /// Run whole iterations until the stopping rule fires.
    Iterate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Total number of iterations (including finished ones when resuming).
        #[arg(long, default_value_t = 1)]
        iterations: u32,
        #[arg(long, short = 'k')]
        budget: Option<u32>,
    },
    /// Sample and verify proofs for a benchmark suite.
    Eval {
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        split: Option<synthproof::evaluate::Split>,
        #[arg(long, short = 'n')]
        samples: Option<u32>,
        /// Comma-separated k values, e.g. 1,64,128.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<u32>>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        /// Where to write the CSV report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Single greedy attempt per problem.
        #[arg(long)]
        greedy: bool,
    },
    /// Print manifest funnels and verifier statistics.
    Stats,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
