//! Config-driven experiment grid: runs every (variant, fraction, seed),
//! reports per-run and aggregate results, and renders comparison tables.

mod config;
mod report;
mod runner;

pub use config::{parse_variant, budget_bottleneck, ExperimentConfig, Task, Timing, VariantSpec, BUDGET_BOTTLENECKS};
pub use report::{
    aggregates_csv, compare_table, emit_results, mean_std, parse_results, result_paths, rows_csv, AggregateRow, ExperimentReport, Format,
    RunRecord,
};
pub use runner::{architecture, detection_counts, execute, load_task_data, run_experiment, TaskData};

/// Environment variable naming the data root; `--data-root` overrides it.
pub const DATA_ROOT_ENV: &str = "COOPSUBNET_DATA";
