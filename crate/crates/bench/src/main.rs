use chromatic_bench::{emit_report, run_trials, Mix, TrialLength, WorkloadConfig};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

/// Throughput of the chromatic tree under random operation mixes. List
/// flags take comma-separated values and run every combination.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Insert and delete percentages `i,d`; gets take the rest. Repeatable.
    #[arg(long = "mix", default_values = ["50,50", "20,10", "0,0"])]
    mixes: Vec<Mix>,
    /// Keys are drawn from [0, K).
    #[arg(long = "key-range", value_delimiter = ',', default_value = "100,10000,1000000")]
    key_ranges: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads: Vec<usize>,
    /// Wall-clock length of each trial.
    #[arg(long, conflicts_with = "ops_budget", default_value_t = 5.0)]
    seconds: f64,
    /// Run exactly B operations per trial instead of a timed trial.
    #[arg(long = "ops-budget")]
    ops_budget: Option<u64>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Discarded trials before measuring each configuration.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// Violations tolerated on a search path before cleanup.
    #[arg(long = "k-violations", value_delimiter = ',', default_value = "0")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Audit the quiescent tree after each trial.
    #[arg(long)]
    audit: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let length = match args.ops_budget {
        Some(b) => TrialLength::OpsBudget(b),
        None => TrialLength::Seconds(args.seconds),
    };
    let mut results = Vec::new();
    for &mix in &args.mixes {
        for &key_range in &args.key_ranges {
            for &threads in &args.threads {
                for &k in &args.k {
                    let config = WorkloadConfig {
                        mix,
                        key_range,
                        threads,
                        length,
                        trials: args.trials,
                        warmup: args.warmup,
                        k,
                        seed: args.seed,
                        audit: args.audit,
                    };
                    eprintln!("{} {mix} keys={key_range} threads={threads}", config.variant());
                    match run_trials(&config) {
                        Ok(r) => results.extend(r),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return ExitCode::FAILURE;
                        }
                    }
                }
            }
        }
    }
    if results.is_empty() {
        eprintln!("error: no trials were run");
        return ExitCode::FAILURE;
    }
    let csv = emit_report(&results);
    match args.csv {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, csv) {
                eprintln!("error: writing {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        }
        None => print!("{csv}"),
    }
    ExitCode::SUCCESS
}
