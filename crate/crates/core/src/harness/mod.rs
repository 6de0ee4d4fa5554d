//! Experiment orchestration: the collect/train outer loop, metric logs,
//! comparisons and charts.
//!
//! Each outer iteration fills the pools with rollouts (paying calibrated
//! rewards once the extractor has been trained), trains the extractor in two
//! phases, logs one record, and clears the pools.

mod chart;
mod compare;
mod config;
mod log;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use chart::{Chart, Series};
pub use compare::{compare, CompareRow, CompareTable};
pub use config::{ExperimentConfig, Mode};
pub use log::{check_metric, read_log, JsonlWriter, MetricsRecord, ReturnWindow, METRIC_NAMES};

use crate::agent::{new_policy_optimizer, EpisodeStats, PolicyNet, StopRule, WorkerFailure, WorkerPool};
use crate::env::{sufficiency_oracle, Env, Observation, WorldState};
use crate::error::{Error, Result};
use crate::esce::{evaluate, new_optimizer, train_phase1, train_phase2, EsceMetrics, EsceModel};
use crate::nn::{softmax, Checkpoint};
use crate::rounds::PoolSet;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const ESCE_NET: &str = "esce";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Converged, or nothing to do.
    Success,
    /// The outer-iteration budget ran out before convergence.
    BudgetExhausted,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeStats>,
    pub failures: Vec<WorkerFailure>,
    pub status: RunStatus,
    /// First iteration at which the convergence rule fired.
    pub converged_at: Option<usize>,
    pub policy: PolicyNet,
    pub esce: EsceModel,
}

impl SeedRun {
    pub fn final_window_mean(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.window_mean)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        self.policy.to_checkpoint(&mut ckpt);
        ckpt.insert(ESCE_NET, self.esce.net.clone());
        ckpt
    }
}

/// Per-iteration callback: the record and its wall-clock seconds.
pub type Sink<'a> = dyn FnMut(&MetricsRecord, f64, &[EpisodeStats]) -> Result<()> + 'a;

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

#[derive(Debug, Clone, PartialEq)]
struct Convergence {
    tol: f64,
    patience: usize,
    last: Option<f64>,
    flat: usize,
}

impl Convergence {
    fn observe(&mut self, mean: Option<f64>, window_full: bool) -> bool {
        let flat = match (self.last, mean) {
            (Some(prev), Some(cur)) if window_full => (cur - prev).abs() < self.tol * prev.abs().max(1e-12),
            _ => false,
        };
        self.flat = if flat { self.flat + 1 } else { 0 };
        self.last = mean;
        self.flat >= self.patience
    }
}

/// Runs the outer loop for one seed in memory. `sink` sees every record as
/// soon as it exists, so callers can persist partial results.
pub fn run_seed(config: &ExperimentConfig, seed: u64, sink: &mut Sink<'_>) -> Result<SeedRun> {
    config.validate()?;
    let mix = config.mix();
    let mut env = config.effective_env();
    env.seed = env.seed.wrapping_add(seed);
    let probe = Env::new(&env)?;
    let (obs_dim, num_actions) = (probe.obs_dim(), probe.num_actions());

    let mut policy = match &config.policy_checkpoint {
        Some(path) => PolicyNet::from_checkpoint(&Checkpoint::load(path)?)?,
        None => PolicyNet::new(
            obs_dim,
            num_actions,
            config.agent.hidden,
            &mut ChaCha8Rng::seed_from_u64(sub_seed(seed, 1)),
        )?,
    };
    if policy.obs_dim() != obs_dim || policy.num_actions() != num_actions {
        return Err(Error::Incompatible(format!(
            "policy expects {} inputs and {} actions, environment has {obs_dim} and {num_actions}",
            policy.obs_dim(),
            policy.num_actions()
        )));
    }
    let mut policy_opt = new_policy_optimizer(&policy, &config.agent)?;
    let mut esce = EsceModel::new(obs_dim, &config.esce, &mut ChaCha8Rng::seed_from_u64(sub_seed(seed, 2)))?;
    let mut esce_opt = new_optimizer(&esce, &config.esce)?;
    let mut esce_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 3));
    let mut workers = WorkerPool::new(&env, &config.agent, mix, config.esce.calibrated_magnitude, sub_seed(seed, 4))?;
    workers.train_policy = !config.freeze_policy;
    let mut pools = PoolSet::new(&config.pools);

    let mut window = ReturnWindow::new(config.window);
    let mut convergence = Convergence {
        tol: config.convergence_tol,
        patience: config.convergence_patience,
        last: None,
        flat: 0,
    };
    let train_esce = mix.alpha > 0.0 || config.train_esce_in_baseline;
    let mut run = SeedRun {
        seed,
        records: Vec::new(),
        episodes: Vec::new(),
        failures: Vec::new(),
        status: if config.outer_iterations == 0 {
            RunStatus::Success
        } else {
            RunStatus::BudgetExhausted
        },
        converged_at: None,
        policy: policy.clone(),
        esce: esce.clone(),
    };
    let (mut total_steps, mut total_episodes) = (0u64, 0u64);

    for iteration in 1..=config.outer_iterations {
        let start = Instant::now();
        let gate = esce.is_trained().then_some(&esce);
        let stats = workers.collect(
            &mut policy,
            &mut policy_opt,
            &mut pools,
            gate,
            StopRule::PoolsFull {
                max_steps: config.max_steps_per_iteration,
            },
        );
        let stats = match stats {
            Ok(s) => s,
            Err(e) => {
                run.policy = policy;
                run.esce = esce;
                return Err(e);
            }
        };
        total_steps += stats.steps;
        total_episodes += stats.episodes.len() as u64;
        for e in &stats.episodes {
            window.push(e.raw_env_return);
        }

        let mut phase1_loss = None;
        let mut phase2 = None;
        if train_esce && !pools.positive.is_empty() && !pools.negative.is_empty() {
            phase1_loss = Some(train_phase1(
                &mut esce,
                &mut esce_opt,
                &pools,
                config.esce.batch_size,
                config.esce.sensitive_fraction,
                &mut esce_rng,
            )?);
            phase2 = Some(train_phase2(
                &mut esce,
                &mut esce_opt,
                &pools.negative,
                config.esce.sigma,
                config.esce.batch_size,
                &mut esce_rng,
            )?);
            esce.updates += 1;
        }
        let metrics = if esce.is_trained() && !stats.rounds.is_empty() {
            evaluate(&esce, &stats.rounds, &pools.negative)?
        } else {
            EsceMetrics::default()
        };
        pools.clear();

        let record = MetricsRecord {
            outer_iteration: iteration,
            episodes: total_episodes,
            iteration_episodes: stats.episodes.len() as u64,
            steps: total_steps,
            window_mean: window.mean(),
            window_min: window.min(),
            window_max: window.max(),
            esce: metrics,
            esce_trained: esce.is_trained(),
            phase1_loss,
            phase2_iters: phase2.map_or(0, |p| p.iterations),
            phase2_reached: phase2.is_some_and(|p| p.reached),
            alpha: mix.alpha,
            beta: mix.beta,
            calibrated_rewards: stats.round_calibrated.iter().map(|&c| c as u64).sum(),
            max_calibrated_per_round: stats.round_calibrated.iter().copied().max().unwrap_or(0),
            policy_updates: stats.updates,
            skipped_updates: stats.skipped_updates,
            worker_failures: stats.failures.len(),
        };
        sink(&record, start.elapsed().as_secs_f64(), &stats.episodes)?;
        run.records.push(record);
        run.episodes.extend(stats.episodes);
        run.failures.extend(stats.failures);

        if convergence.observe(window.mean(), window.is_full()) && run.converged_at.is_none() {
            run.converged_at = Some(iteration);
            run.status = RunStatus::Success;
            if config.stop_on_convergence {
                break;
            }
        }
    }
    run.policy = policy;
    run.esce = esce;
    Ok(run)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub final_window_mean: Option<f64>,
    pub worker_failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub seeds: Vec<SeedSummary>,
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed-{seed}"))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write-test");
    std::fs::write(&probe, b"").map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

/// Runs every seed, writing logs, checkpoints and charts under
/// `config.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.output_dir;
    prepare_dir(out)?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;

    let mut summaries = Vec::new();
    let mut logs = Vec::new();
    for &seed in &config.seeds {
        let dir = seed_dir(out, seed);
        prepare_dir(&dir)?;
        let mut metrics = JsonlWriter::create(&dir.join(METRICS_FILE))?;
        let mut timing = JsonlWriter::create(&dir.join(TIMING_FILE))?;
        let mut episodes = JsonlWriter::create(&dir.join(EPISODES_FILE))?;
        let mut sink = |r: &MetricsRecord, secs: f64, eps: &[EpisodeStats]| -> Result<()> {
            metrics.write(r)?;
            timing.write(&serde_json::json!({"outer_iteration": r.outer_iteration, "seconds": secs}))?;
            for e in eps {
                episodes.write(e)?;
            }
            Ok(())
        };
        let result = run_seed(config, seed, &mut sink)?;
        result.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        if config.charts && !result.records.is_empty() {
            let log = vec![(format!("seed {seed}"), result.records.clone())];
            chart_records(&log, &["window_mean".to_string()], &dir.join("window_mean.svg"))?;
            chart_records(
                &log,
                &["precision_pos".to_string(), "recall_pos".to_string()],
                &dir.join("precision_recall.svg"),
            )?;
        }
        summaries.push(SeedSummary {
            seed,
            status: result.status,
            iterations: result.records.len(),
            converged_at: result.converged_at,
            final_window_mean: result.final_window_mean(),
            worker_failures: result.failures.len(),
        });
        logs.push((format!("seed {seed}"), result.records));
    }
    if config.charts && logs.iter().any(|(_, r)| !r.is_empty()) {
        chart_records(&logs, &["window_mean".to_string()], &out.join("window_mean.svg"))?;
    }
    let status = if summaries.iter().all(|s| s.status == RunStatus::Success) {
        RunStatus::Success
    } else {
        RunStatus::BudgetExhausted
    };
    Ok(RunSummary {
        status,
        seeds: summaries,
    })
}

/// Writes an SVG of `metrics` over outer iterations from the given logs;
/// with several logs a bold mean series is added per metric.
pub fn emit_chart(logs: &[PathBuf], metrics: &[String], out: &Path) -> Result<()> {
    let mut loaded = Vec::new();
    for path in logs {
        let records = read_log(path)?;
        if records.is_empty() {
            return Err(Error::EmptyLog);
        }
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        loaded.push((label, records));
    }
    chart_records(&loaded, metrics, out)
}

pub fn chart_records(logs: &[(String, Vec<MetricsRecord>)], metrics: &[String], out: &Path) -> Result<()> {
    if logs.is_empty() || logs.iter().any(|(_, r)| r.is_empty()) {
        return Err(Error::EmptyLog);
    }
    if metrics.is_empty() {
        return Err(Error::Config("no metric requested".into()));
    }
    for m in metrics {
        check_metric(m)?;
    }
    let mut series = Vec::new();
    for m in metrics {
        let mut per_log = Vec::new();
        for (label, records) in logs {
            let mut pts = Vec::new();
            for r in records {
                if let Some(v) = r.metric(m)? {
                    pts.push((r.outer_iteration as f64, v));
                }
            }
            let name = if metrics.len() > 1 { format!("{label} {m}") } else { label.clone() };
            per_log.push(Series::new(name, pts));
        }
        if logs.len() > 1 {
            let mut mean = Series::new(format!("mean {m}"), mean_by_x(&per_log));
            mean.emphasis = true;
            series.extend(per_log);
            series.push(mean);
        } else {
            series.extend(per_log);
        }
    }
    let chart = Chart {
        title: metrics.join(", "),
        x_label: "outer iteration".into(),
        y_label: if metrics.len() == 1 { metrics[0].clone() } else { "value".into() },
        series,
    };
    std::fs::write(out, chart.to_svg()).map_err(|e| Error::io(out, e))
}

fn mean_by_x(series: &[Series]) -> Vec<(f64, f64)> {
    let mut acc: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    for s in series {
        for &(x, y) in &s.points {
            let e = acc.entry(x as i64).or_default();
            e.0 += y;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(x, (sum, n))| (x as f64, sum / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub cell: usize,
    pub countdown: usize,
    pub t: usize,
    pub success_prob: f64,
    pub reachable: bool,
    pub sufficient: bool,
    /// Extractor probability when the checkpoint carries one.
    pub esce_prob: Option<f64>,
}

/// The oracle's view of every state under the checkpoint's policy (uniform
/// without a checkpoint), next to the stored extractor's prediction.
pub fn oracle_dump(config: &ExperimentConfig, checkpoint: Option<&Path>, epsilon: f64) -> Result<Vec<OracleRow>> {
    let env = config.effective_env();
    let probe = Env::new(&env)?;
    let ckpt = checkpoint.map(Checkpoint::load).transpose()?;
    let policy = match &ckpt {
        Some(c) => Some(PolicyNet::from_checkpoint(c)?),
        None => None,
    };
    let na = probe.num_actions();
    let probs = |obs: &Observation| -> Vec<f64> {
        match &policy {
            Some(p) => p
                .evaluate(obs.as_slice())
                .map(|(logits, _)| softmax(&logits))
                .unwrap_or_else(|_| vec![f64::NAN; na]),
            None => vec![1.0 / na as f64; na],
        }
    };
    if let Some(p) = &policy {
        if p.obs_dim() != probe.obs_dim() || p.num_actions() != na {
            return Err(Error::Incompatible("checkpoint policy does not match the environment".into()));
        }
    }
    let esce = match ckpt.as_ref().and_then(|c| c.get(ESCE_NET)) {
        Some(net) => Some(EsceModel::with_net(net.clone(), &config.esce)?),
        None => None,
    };
    let report = sufficiency_oracle(&env, &probs, epsilon)?;
    let mut rows = Vec::with_capacity(report.entries.len());
    for e in report.entries {
        let WorldState { cell, countdown, t } = e.state;
        rows.push(OracleRow {
            cell,
            countdown,
            t,
            success_prob: e.success_prob,
            reachable: e.reachable,
            sufficient: e.sufficient,
            esce_prob: esce.as_ref().map(|m| m.predict(&e.observation)).transpose()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    fn tiny(mode: Mode) -> ExperimentConfig {
        let mut env = EnvConfig::chain(8, 3);
        env.max_episode_steps = 40;
        let mut c = ExperimentConfig {
            mode,
            env,
            outer_iterations: 3,
            max_steps_per_iteration: 1_500,
            charts: false,
            ..Default::default()
        };
        c.pools.capacity = 200;
        c.pools.sensitive_capacity = 50;
        c.agent.hidden = 16;
        c.esce.hidden = 16;
        c.esce.phase2_max_iters = 50;
        c
    }

    fn silent(c: &ExperimentConfig, seed: u64) -> SeedRun {
        run_seed(c, seed, &mut |_, _, _| Ok(())).unwrap()
    }

    #[test]
    fn convergence_needs_patience_and_full_window() {
        let mut c = Convergence {
            tol: 0.01,
            patience: 3,
            last: None,
            flat: 0,
        };
        assert!(!c.observe(Some(1.0), true));
        assert!(!c.observe(Some(1.001), true));
        assert!(!c.observe(Some(1.002), true));
        assert!(c.observe(Some(1.003), true));
        assert!(!c.observe(Some(2.0), true));
        assert!(!c.observe(Some(2.0), false));
    }

    #[test]
    fn logged_mix_matches_mode() {
        for mode in Mode::ALL {
            let run = silent(&tiny(mode), 1);
            for r in &run.records {
                assert_eq!((r.alpha, r.beta), (mode.mix().alpha, mode.mix().beta));
            }
        }
    }

    #[test]
    fn iterations_increase_and_calibration_waits_for_training() {
        let run = silent(&tiny(Mode::Full), 2);
        assert_eq!(run.records[0].calibrated_rewards, 0);
        for w in run.records.windows(2) {
            assert!(w[1].outer_iteration > w[0].outer_iteration);
        }
        assert!(run.records.iter().all(|r| r.max_calibrated_per_round <= 1));
    }

    #[test]
    fn zero_budget_is_success() {
        let mut c = tiny(Mode::Baseline);
        c.outer_iterations = 0;
        let run = silent(&c, 0);
        assert!(run.records.is_empty());
        assert_eq!(run.status, RunStatus::Success);
    }

    #[test]
    fn frozen_policy_stays_put() {
        let mut c = tiny(Mode::Full);
        c.freeze_policy = true;
        let a = silent(&c, 3);
        let mut fresh = c.clone();
        fresh.outer_iterations = 0;
        let b = silent(&fresh, 3);
        assert_eq!(a.policy, b.policy);
        assert!(a.records.iter().all(|r| r.policy_updates == 0));
    }
}
