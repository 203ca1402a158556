//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 config error,
//! 3 evaluator failure (checkpoint kept for `--resume`).

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::report::{chart_file, ReportError};
use crate::runner::{compare_to_dir, run_to_dir, summary, RunError, RunOptions, RunOutcome};
use crate::search::Strategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EVALUATOR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "maspob", version, about = "Budgeted prompt-combination search for multi-agent workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one optimization from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in OUT.
        #[arg(long)]
        resume: bool,
        /// Stop after this many rounds, keeping the checkpoint.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Compare strategies over several seeds of a synthetic landscape.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of coordinate, global, random.
        #[arg(long, value_delimiter = ',', default_value = "coordinate,random")]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a round log as an SVG convergence chart.
    Chart {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &RunError) -> i32 {
    match e {
        RunError::Config(_) => EXIT_CONFIG,
        RunError::Evaluator(_) => EXIT_EVALUATOR,
        RunError::Optimizer(_) | RunError::Io(_) => EXIT_FAILURE,
    }
}

pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run {
            config,
            out,
            resume,
            stop_after,
        } => match run_to_dir(&config, &out, RunOptions { resume, stop_after }) {
            Ok(RunOutcome::Completed(r)) => {
                let best = r.best_combination.map(|c| c.to_log_string()).unwrap_or_else(|| "-".into());
                println!("completed {} rounds; best {best} scored {}", r.evaluator_calls, r.best_validation);
                EXIT_OK
            }
            Ok(RunOutcome::Stopped { rounds }) => {
                println!("stopped after {rounds} rounds; continue with --resume");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Compare {
            config,
            strategies,
            seeds,
            out,
        } => match compare_to_dir(&config, &strategies, seeds, &out) {
            Ok(report) => {
                for s in summary(&report) {
                    println!(
                        "{:<10} runs {:>3}  best true {:.4} ± {:.4}  acq evals/run {:.0}  search {:.3}s",
                        s.strategy.to_string(),
                        s.runs,
                        s.mean_best_true_score,
                        s.sd_best_true_score,
                        s.mean_acquisition_evals,
                        s.total_search_time_s
                    );
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Chart { log, out } => match chart_file(&log, &out) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                match e {
                    ReportError::ParseError(_) => EXIT_CONFIG,
                    ReportError::Io(_) => EXIT_FAILURE,
                }
            }
        },
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    execute(cli)
}
