use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::chart::{Chart, Series};
use super::config::ExperimentConfig;
use super::log::{check_metric, read_log, MetricsRecord};
use super::{CONFIG_FILE, METRICS_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: String,
    pub outer_iteration: usize,
    pub seeds: usize,
    pub mean: f64,
    /// Normal-approximation 95% band across seeds.
    pub low: f64,
    pub high: f64,
    /// `mean` minus the first run's mean at the same iteration.
    pub diff_vs_first: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable {
    pub metric: String,
    pub runs: Vec<String>,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("run\touter_iteration\tseeds\tmean\tlow\thigh\tdiff_vs_first\n");
        for r in &self.rows {
            let diff = r.diff_vs_first.map_or(String::new(), |d| d.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.run, r.outer_iteration, r.seeds, r.mean, r.low, r.high, diff
            );
        }
        out
    }
}

fn seed_logs(dir: &Path) -> Result<Vec<Vec<MetricsRecord>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .map(|p| p.join(METRICS_FILE))
        .filter(|p| p.exists())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyLog);
    }
    paths.iter().map(|p| read_log(p)).collect()
}

fn run_label(dir: &Path, config: &ExperimentConfig) -> String {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    format!("{name} ({})", config.mode)
}

/// Per-iteration mean and band of `metric` for each run, written as
/// `compare.tsv` and `compare.svg` into `out_dir`.
pub fn compare(run_dirs: &[PathBuf], metric: &str, out_dir: &Path) -> Result<CompareTable> {
    check_metric(metric)?;
    if run_dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        runs.push((dir, config, seed_logs(dir)?));
    }
    let reference = {
        let mut env = runs[0].1.effective_env();
        env.seed = 0;
        env
    };
    for (dir, config, _) in &runs[1..] {
        let mut env = config.effective_env();
        env.seed = 0;
        if env != reference {
            return Err(Error::Incompatible(format!(
                "{} uses a different environment than {}",
                dir.display(),
                run_dirs[0].display()
            )));
        }
    }

    let mut labels = Vec::new();
    let mut per_run: Vec<BTreeMap<usize, (f64, f64, f64, usize)>> = Vec::new();
    for (i, (dir, config, logs)) in runs.iter().enumerate() {
        let mut label = run_label(dir, config);
        if labels.contains(&label) {
            label = format!("{label} #{}", i + 1);
        }
        labels.push(label);
        let mut by_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for log in logs {
            for r in log {
                if let Some(v) = r.metric(metric)? {
                    by_iter.entry(r.outer_iteration).or_default().push(v);
                }
            }
        }
        let stats = by_iter
            .into_iter()
            .map(|(it, vals)| {
                let n = vals.len();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let half = if n > 1 {
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    1.96 * (var / n as f64).sqrt()
                } else {
                    0.0
                };
                (it, (mean, mean - half, mean + half, n))
            })
            .collect();
        per_run.push(stats);
    }

    let mut rows = Vec::new();
    for (label, stats) in labels.iter().zip(&per_run) {
        for (&it, &(mean, low, high, seeds)) in stats {
            rows.push(CompareRow {
                run: label.clone(),
                outer_iteration: it,
                seeds,
                mean,
                low,
                high,
                diff_vs_first: per_run[0].get(&it).map(|f| mean - f.0),
            });
        }
    }
    let table = CompareTable {
        metric: metric.to_string(),
        runs: labels.clone(),
        rows,
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tsv = out_dir.join("compare.tsv");
    std::fs::write(&tsv, table.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
    let series = labels
        .iter()
        .zip(&per_run)
        .map(|(label, stats)| Series {
            label: label.clone(),
            points: stats.iter().map(|(&it, s)| (it as f64, s.0)).collect(),
            band: stats.iter().map(|(&it, s)| (it as f64, s.1, s.2)).collect(),
            emphasis: true,
        })
        .collect();
    let chart = Chart {
        title: format!("{metric} by run"),
        x_label: "outer iteration".into(),
        y_label: metric.to_string(),
        series,
    };
    let svg = out_dir.join("compare.svg");
    std::fs::write(&svg, chart.to_svg()).map_err(|e| Error::io(&svg, e))?;
    Ok(table)
}
