use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Task;
use crate::error::{contract_err, Error, Result};

/// One (variant, fraction, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub variant: String,
    pub fraction: f64,
    pub seed: u64,
    /// Final test metric.
    pub metric: f64,
    /// Mean test relative reconstruction loss (Coop variants only).
    pub coop_loss: Option<f64>,
    pub wall_seconds: f64,
}

/// Mean and sample standard deviation over the seeds of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub variant: String,
    pub fraction: f64,
    pub runs: usize,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub coop_loss_mean: Option<f64>,
    pub coop_loss_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub rows: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// Mean and sample (n - 1) standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl ExperimentReport {
    /// Builds a report, deriving aggregates from `rows`. Cells keep the order
    /// in which they first appear.
    pub fn new(config_hash: impl Into<String>, rows: Vec<RunRecord>) -> Self {
        let mut keys: Vec<(String, String, f64)> = Vec::new();
        for r in &rows {
            let k = (r.task.clone(), r.variant.clone(), r.fraction);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let aggregates = keys
            .into_iter()
            .map(|(task, variant, fraction)| {
                let cell: Vec<&RunRecord> = rows.iter().filter(|r| r.task == task && r.variant == variant && r.fraction == fraction).collect();
                let metrics: Vec<f64> = cell.iter().map(|r| r.metric).collect();
                let (metric_mean, metric_std) = mean_std(&metrics);
                let coop: Vec<f64> = cell.iter().filter_map(|r| r.coop_loss).collect();
                let (coop_loss_mean, coop_loss_std) = if coop.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&coop);
                    (Some(m), Some(s))
                };
                AggregateRow {
                    task,
                    variant,
                    fraction,
                    runs: cell.len(),
                    metric_mean,
                    metric_std,
                    coop_loss_mean,
                    coop_loss_std,
                }
            })
            .collect();
        Self {
            config_hash: config_hash.into(),
            rows,
            aggregates,
        }
    }

    pub fn aggregate(&self, variant: &str, fraction: f64) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.variant == variant && a.fraction == fraction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

const ROW_HEADER: [&str; 8] = ["task", "variant", "fraction", "seed", "metric", "coop_loss", "wall_seconds", "config_hash"];
const AGG_HEADER: [&str; 9] = [
    "task",
    "variant",
    "fraction",
    "runs",
    "metric_mean",
    "metric_std",
    "coop_loss_mean",
    "coop_loss_std",
    "config_hash",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => contract_err!("csv: {other:?}"),
    }
}

pub fn rows_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROW_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.task.clone(),
            r.variant.clone(),
            r.fraction.to_string(),
            r.seed.to_string(),
            r.metric.to_string(),
            opt(r.coop_loss),
            r.wall_seconds.to_string(),
            report.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn aggregates_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AGG_HEADER).map_err(csv_err)?;
    for a in &report.aggregates {
        w.write_record([
            a.task.clone(),
            a.variant.clone(),
            a.fraction.to_string(),
            a.runs.to_string(),
            a.metric_mean.to_string(),
            a.metric_std.to_string(),
            opt(a.coop_loss_mean),
            opt(a.coop_loss_std),
            report.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Paths written by [`emit_results`] for a given output directory.
pub fn result_paths(dir: &Path, format: Format) -> (PathBuf, PathBuf) {
    match format {
        Format::Csv => (dir.join("results.csv"), dir.join("results-aggregate.csv")),
        Format::Json => (dir.join("results.json"), dir.join("results-aggregate.json")),
    }
}

/// Writes raw rows and the sibling aggregate file; returns their paths.
pub fn emit_results(report: &ExperimentReport, dir: &Path, format: Format) -> Result<(PathBuf, PathBuf)> {
    if report.rows.is_empty() {
        return Err(contract_err!("refusing to emit an empty report"));
    }
    fs::create_dir_all(dir)?;
    let (rows_path, agg_path) = result_paths(dir, format);
    match format {
        Format::Csv => {
            fs::write(&rows_path, rows_csv(report)?)?;
            fs::write(&agg_path, aggregates_csv(report)?)?;
        }
        Format::Json => {
            let rows = serde_json::json!({ "config_hash": report.config_hash, "rows": report.rows });
            let aggs = serde_json::json!({ "config_hash": report.config_hash, "aggregates": report.aggregates });
            let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).map_err(|e| contract_err!("json: {e}"));
            fs::write(&rows_path, pretty(&rows)? + "\n")?;
            fs::write(&agg_path, pretty(&aggs)? + "\n")?;
        }
    }
    Ok((rows_path, agg_path))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| contract_err!("bad {what} `{}` in line {}", rec.get(i).unwrap_or(""), rec.position().map_or(0, |p| p.line())))
}

fn opt_field(rec: &csv::StringRecord, i: usize, what: &str) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") => Ok(None),
        _ => field(rec, i, what).map(Some),
    }
}

fn read_csv(bytes: &[u8], header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let h = r.headers().map_err(csv_err)?.clone();
    if h.iter().ne(header.iter().copied()) {
        return Err(contract_err!("unexpected header {:?}", h.iter().collect::<Vec<_>>()));
    }
    r.records().map(|x| x.map_err(csv_err)).collect()
}

fn single_hash(hashes: impl Iterator<Item = String>) -> Result<String> {
    let mut out: Option<String> = None;
    for h in hashes {
        match &out {
            None => out = Some(h),
            Some(prev) if *prev != h => return Err(contract_err!("rows from different configs ({prev} and {h}) in one report")),
            _ => {}
        }
    }
    out.ok_or_else(|| contract_err!("empty report"))
}

/// Reads a report back from the files written by [`emit_results`].
pub fn parse_results(rows_path: &Path, format: Format) -> Result<ExperimentReport> {
    let agg_path = match format {
        Format::Csv => rows_path.with_file_name(format!("{}-aggregate.csv", stem(rows_path))),
        Format::Json => rows_path.with_file_name(format!("{}-aggregate.json", stem(rows_path))),
    };
    match format {
        Format::Csv => {
            let rows_raw = read_csv(&fs::read(rows_path)?, &ROW_HEADER)?;
            let aggs_raw = read_csv(&fs::read(&agg_path)?, &AGG_HEADER)?;
            let hash = single_hash(rows_raw.iter().chain(&aggs_raw).map(|r| r.get(r.len() - 1).unwrap_or("").to_string()))?;
            let rows = rows_raw
                .iter()
                .map(|r| {
                    Ok(RunRecord {
                        task: field(r, 0, "task")?,
                        variant: field(r, 1, "variant")?,
                        fraction: field(r, 2, "fraction")?,
                        seed: field(r, 3, "seed")?,
                        metric: field(r, 4, "metric")?,
                        coop_loss: opt_field(r, 5, "coop_loss")?,
                        wall_seconds: field(r, 6, "wall_seconds")?,
                    })
                })
                .collect::<Result<_>>()?;
            let aggregates = aggs_raw
                .iter()
                .map(|r| {
                    Ok(AggregateRow {
                        task: field(r, 0, "task")?,
                        variant: field(r, 1, "variant")?,
                        fraction: field(r, 2, "fraction")?,
                        runs: field(r, 3, "runs")?,
                        metric_mean: field(r, 4, "metric_mean")?,
                        metric_std: field(r, 5, "metric_std")?,
                        coop_loss_mean: opt_field(r, 6, "coop_loss_mean")?,
                        coop_loss_std: opt_field(r, 7, "coop_loss_std")?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ExperimentReport {
                config_hash: hash,
                rows,
                aggregates,
            })
        }
        Format::Json => {
            #[derive(Deserialize)]
            struct Rows {
                config_hash: String,
                rows: Vec<RunRecord>,
            }
            #[derive(Deserialize)]
            struct Aggs {
                config_hash: String,
                aggregates: Vec<AggregateRow>,
            }
            let json = |p: &Path| -> Result<String> { Ok(fs::read_to_string(p)?) };
            let rows: Rows = serde_json::from_str(&json(rows_path)?).map_err(|e| contract_err!("json: {e}"))?;
            let aggs: Aggs = serde_json::from_str(&json(&agg_path)?).map_err(|e| contract_err!("json: {e}"))?;
            let hash = single_hash([rows.config_hash, aggs.config_hash].into_iter())?;
            Ok(ExperimentReport {
                config_hash: hash,
                rows: rows.rows,
                aggregates: aggs.aggregates,
            })
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Formats a cell value; accuracies are shown as percentages.
fn scale(task: &str) -> f64 {
    if task == Task::MnistReduced.name() {
        100.0
    } else {
        1.0
    }
}

/// Variants as rows, fractions as columns, `mean ± std` cells; `*` marks the
/// best mean in each column (every tied variant is marked).
pub fn compare_table(report: &ExperimentReport) -> Result<String> {
    let task = report.aggregates.first().map(|a| a.task.clone()).ok_or_else(|| contract_err!("empty report"))?;
    let higher = Task::parse(&task).map_or(true, Task::higher_is_better);
    let aggs: Vec<&AggregateRow> = report.aggregates.iter().filter(|a| a.task == task).collect();
    let mut variants: Vec<&str> = Vec::new();
    let mut fractions: Vec<f64> = Vec::new();
    for a in &aggs {
        if !variants.contains(&a.variant.as_str()) {
            variants.push(&a.variant);
        }
        if !fractions.contains(&a.fraction) {
            fractions.push(a.fraction);
        }
    }
    let common = fractions.iter().any(|&f| aggs.iter().filter(|a| a.fraction == f).count() >= 2);
    if !common {
        return Err(contract_err!("no fraction of task {task} has two or more variants to compare"));
    }
    let k = scale(&task);
    let mut header = vec![format!("{task} [{}]", report.config_hash)];
    header.extend(fractions.iter().map(|f| format!("{}%", f * 100.0)));
    let mut table = vec![header];
    for v in &variants {
        let mut row = vec![v.to_string()];
        for &f in &fractions {
            let cell = aggs.iter().find(|a| a.variant == *v && a.fraction == f);
            row.push(match cell {
                None => "-".into(),
                Some(a) => {
                    let col: Vec<f64> = aggs.iter().filter(|b| b.fraction == f).map(|b| b.metric_mean).collect();
                    let best = col.iter().copied().fold(if higher { f64::NEG_INFINITY } else { f64::INFINITY }, |m, x| {
                        if higher {
                            m.max(x)
                        } else {
                            m.min(x)
                        }
                    });
                    let flag = if col.len() >= 2 && a.metric_mean == best { " *" } else { "" };
                    format!("{:.4} ± {:.4}{flag}", a.metric_mean * k, a.metric_std * k)
                }
            });
        }
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, seed: u64, metric: f64, coop: Option<f64>) -> RunRecord {
        RunRecord {
            task: "mnist-reduced".into(),
            variant: variant.into(),
            fraction: 0.01,
            seed,
            metric,
            coop_loss: coop,
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn aggregate_counting() {
        let rows: Vec<RunRecord> = (0..3).flat_map(|s| [row("baseline", s, 0.9, None), row("coopsubnet", s, 0.92, Some(0.01))]).collect();
        let r = ExperimentReport::new("h", rows);
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.aggregates.len(), 2);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[90.0, 92.0, 94.0]);
        assert_eq!((m, s), (92.0, 2.0));
        assert_eq!(mean_std(&[3.0]).1, 0.0);
    }

    #[test]
    fn one_row_csv_has_two_lines() {
        let r = ExperimentReport::new("h", vec![row("baseline", 0, 0.5, None)]);
        let text = String::from_utf8(rows_csv(&r).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("task,variant,fraction,seed,metric,coop_loss,wall_seconds"));
    }

    #[test]
    fn round_trips() {
        let rows = vec![
            row("baseline", 0, 0.1 + 0.2, None),
            row("coopsubnet", 0, 1.0 / 3.0, Some(0.012345678901234)),
            row("coopsubnet", 1, 0.75, Some(1e-17)),
        ];
        let r = ExperimentReport::new("abc", rows);
        for fmt in [Format::Csv, Format::Json] {
            let dir = tempfile::tempdir().unwrap();
            let (p, _) = emit_results(&r, dir.path(), fmt).unwrap();
            assert_eq!(parse_results(&p, fmt).unwrap(), r);
        }
    }

    #[test]
    fn mixed_hashes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = ExperimentReport::new("aaa", vec![row("baseline", 0, 0.5, None)]);
        let (p, agg) = emit_results(&a, dir.path(), Format::Csv).unwrap();
        let b = ExperimentReport::new("bbb", vec![row("baseline", 0, 0.5, None)]);
        fs::write(agg, aggregates_csv(&b).unwrap()).unwrap();
        assert!(parse_results(&p, Format::Csv).is_err());
    }

    #[test]
    fn table_flags_best_and_ties() {
        let r = ExperimentReport::new("h", vec![row("baseline", 0, 0.9, None), row("coopsubnet", 0, 0.95, Some(0.01))]);
        let t = compare_table(&r).unwrap();
        assert_eq!(t.matches(" *").count(), 1);
        assert!(t.lines().find(|l| l.starts_with("coopsubnet")).unwrap().ends_with('*'));
        let tie = ExperimentReport::new("h", vec![row("baseline", 0, 0.9, None), row("coopsubnet", 0, 0.9, None)]);
        assert_eq!(compare_table(&tie).unwrap().matches(" *").count(), 2);
        let alone = ExperimentReport::new("h", vec![row("baseline", 0, 0.9, None)]);
        assert!(matches!(compare_table(&alone), Err(Error::Contract(_))));
    }
}
