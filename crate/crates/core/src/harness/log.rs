use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esce::EsceMetrics;

/// One line of a per-seed metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub outer_iteration: usize,
    /// Completed episodes so far.
    pub episodes: u64,
    pub iteration_episodes: u64,
    /// Environment steps so far.
    pub steps: u64,
    pub window_mean: Option<f64>,
    pub window_min: Option<f64>,
    pub window_max: Option<f64>,
    #[serde(flatten)]
    pub esce: EsceMetrics,
    pub esce_trained: bool,
    pub phase1_loss: Option<f64>,
    pub phase2_iters: usize,
    pub phase2_reached: bool,
    pub alpha: f64,
    pub beta: f64,
    pub calibrated_rewards: u64,
    pub max_calibrated_per_round: usize,
    pub policy_updates: u64,
    pub skipped_updates: u64,
    pub worker_failures: usize,
}

/// Numeric fields that can be charted.
pub const METRIC_NAMES: [&str; 20] = [
    "episodes",
    "iteration_episodes",
    "steps",
    "window_mean",
    "window_min",
    "window_max",
    "precision_pos",
    "recall_pos",
    "recall_neg",
    "n_ident",
    "n_suff",
    "n_pos",
    "phase1_loss",
    "phase2_iters",
    "alpha",
    "beta",
    "calibrated_rewards",
    "max_calibrated_per_round",
    "policy_updates",
    "skipped_updates",
];

impl MetricsRecord {
    /// Value of a charted field; `None` for a null entry.
    pub fn metric(&self, name: &str) -> Result<Option<f64>> {
        check_metric(name)?;
        let value = serde_json::to_value(self)?;
        Ok(value.get(name).and_then(|v| v.as_f64()))
    }
}

pub fn check_metric(name: &str) -> Result<()> {
    if METRIC_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(Error::UnknownMetric {
            name: name.to_string(),
            valid: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Appends JSON lines, flushing after each so a crash leaves whole records.
pub struct JsonlWriter {
    path: std::path::PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            file: std::io::BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Returns of the most recent completed episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnWindow {
    size: usize,
    values: VecDeque<f64>,
}

impl ReturnWindow {
    pub fn new(size: usize) -> Self {
        ReturnWindow {
            size: size.max(1),
            values: VecDeque::with_capacity(size),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.values.len() == self.size {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().sum::<f64>() / self.values.len() as f64)
    }

    pub fn min(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_slides() {
        let mut w = ReturnWindow::new(3);
        assert_eq!(w.mean(), None);
        for v in [1.0, 2.0, 3.0, 10.0] {
            w.push(v);
        }
        assert!(w.is_full());
        assert_eq!(w.mean(), Some(5.0));
        assert_eq!(w.min(), Some(2.0));
        assert_eq!(w.max(), Some(10.0));
    }

    #[test]
    fn every_metric_name_is_a_numeric_field() {
        let r = MetricsRecord {
            outer_iteration: 1,
            episodes: 2,
            iteration_episodes: 2,
            steps: 3,
            window_mean: Some(0.5),
            window_min: Some(0.0),
            window_max: Some(1.0),
            esce: EsceMetrics::default(),
            esce_trained: true,
            phase1_loss: Some(0.1),
            phase2_iters: 4,
            phase2_reached: true,
            alpha: 1.0,
            beta: 0.0,
            calibrated_rewards: 5,
            max_calibrated_per_round: 1,
            policy_updates: 6,
            skipped_updates: 0,
            worker_failures: 0,
        };
        for name in METRIC_NAMES {
            assert!(r.metric(name).unwrap().is_some(), "{name}");
        }
        match r.metric("nope") {
            Err(Error::UnknownMetric { valid, .. }) => assert_eq!(valid.len(), METRIC_NAMES.len()),
            other => panic!("{other:?}"),
        }
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsRecord>(&line).unwrap(), r);
    }
}
