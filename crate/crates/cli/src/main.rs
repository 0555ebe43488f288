//! `coopsubnet`: run experiment grids, render comparison tables, and run the
//! built-in gradient and metric checks.
//!
//! Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure,
//! 3 a `gradcheck`/`selftest` check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coopsubnet::experiment::{compare_table, parse_results, run_experiment, ExperimentConfig, Format, DATA_ROOT_ENV};
use coopsubnet::selftest::{gradcheck_suite, metric_oracle_suite, CheckOutcome};
use coopsubnet::Error;

#[derive(Parser)]
#[command(name = "coopsubnet", version, about = "Cooperating auto-encoder regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (variant, fraction, seed) of a key=value config.
    Run {
        config: PathBuf,
        /// Root holding the dataset directories.
        #[arg(long, env = DATA_ROOT_ENV, default_value = "data")]
        data_root: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the comparison table of a results.csv or results.json.
    Table { report: PathBuf },
    /// Finite-difference gradient checks for every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metric checks against naive oracles and hand-built fixtures.
    Selftest {
        #[arg(long, default_value_t = 100)]
        maps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn report_checks(outcomes: &[CheckOutcome]) -> Result<(), Failure> {
    for o in outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {failed} failed", outcomes.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Csv,
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, data_root, output } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Failure::Invalid(format!("{}: {e}", config.display())))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(dir) = output {
                cfg.output = dir;
            }
            log::info!("config {} ({}), data root {}", config.display(), cfg.hash(), data_root.display());
            let report = run_experiment(&cfg, &data_root)?;
            match compare_table(&report) {
                Ok(table) => print!("{table}"),
                Err(_) => {
                    for a in &report.aggregates {
                        println!("{} {} {}: {:.6} ± {:.6}", a.task, a.variant, a.fraction, a.metric_mean, a.metric_std);
                    }
                }
            }
            println!("results in {}", cfg.output.display());
            Ok(())
        }
        Command::Table { report } => {
            let r = parse_results(&report, format_of(&report))?;
            print!("{}", compare_table(&r)?);
            Ok(())
        }
        Command::Gradcheck { points, seed } => report_checks(&gradcheck_suite(points, seed)?),
        Command::Selftest { maps, seed } => report_checks(&metric_oracle_suite(maps, seed)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check) => ExitCode::from(3),
    }
}
