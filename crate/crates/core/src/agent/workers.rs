//! Rollout workers sharing one policy.
//!
//! Every tick, each live worker acts for `n_steps` on the same parameter
//! snapshot and computes its gradient. A single writer then pushes the
//! workers' rounds into the pools and applies their gradients in worker
//! order, so a run is reproducible for any worker count.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{apply_gradients, compute_gradients, AgentConfig, PolicyGrads, PolicyNet, RewardMix, RolloutBuffer, RolloutStep, SurrogateLoss};
use crate::env::{Env, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::esce::{CalibrationState, EsceModel};
use crate::nn::Optimizer;
use crate::rounds::{PoolSet, Round, RoundBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: u64,
    pub worker: usize,
    pub raw_env_return: f64,
    pub mixed_return: f64,
    pub calibrated_reward_count: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerFailure {
    pub worker: usize,
    pub message: String,
}

/// When a collection phase ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// After this many environment steps (rounded up to whole ticks).
    Steps(u64),
    /// Once both main pools are full, or after `max_steps`.
    PoolsFull { max_steps: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct CollectStats {
    pub steps: u64,
    pub updates: u64,
    pub skipped_updates: u64,
    pub episodes: Vec<EpisodeStats>,
    /// Every finished round, in the order it reached the pools.
    pub rounds: Vec<Round>,
    /// Calibrated rewards paid inside each entry of `rounds`.
    pub round_calibrated: Vec<usize>,
    /// Rounds pushed by each worker.
    pub round_pushes: Vec<u64>,
    pub failures: Vec<WorkerFailure>,
    pub last_loss: Option<SurrogateLoss>,
}

struct FinishedRound {
    round: Round,
    flags: Vec<bool>,
    calibrated: usize,
}

struct TickOutput {
    steps: u64,
    rounds: Vec<FinishedRound>,
    episodes: Vec<EpisodeStats>,
    grads: Option<Option<(SurrogateLoss, PolicyGrads)>>,
}

struct Worker {
    id: usize,
    env: Env,
    obs: Observation,
    builder: RoundBuilder,
    flags: Vec<bool>,
    round_calibrated: usize,
    cal: CalibrationState,
    buffer: RolloutBuffer,
    rng: ChaCha8Rng,
    episode: u64,
    ep_raw: f64,
    ep_mixed: f64,
    ep_calibrated: usize,
    ep_len: usize,
    alive: bool,
    #[cfg(test)]
    panic_on_tick: Option<u64>,
    ticks: u64,
}

impl Worker {
    fn new(id: usize, env_config: &EnvConfig, seed: u64, agent: &AgentConfig, magnitude: f64) -> Result<Self> {
        let mut config = env_config.clone();
        config.seed = env_config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(id as u64));
        let mut env = Env::new(&config)?;
        let obs = env.reset();
        Ok(Worker {
            id,
            env,
            obs,
            builder: RoundBuilder::new(),
            flags: Vec::new(),
            round_calibrated: 0,
            cal: CalibrationState::new(magnitude),
            buffer: RolloutBuffer::new(agent.n_steps, agent.gamma),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)),
            episode: 0,
            ep_raw: 0.0,
            ep_mixed: 0.0,
            ep_calibrated: 0,
            ep_len: 0,
            alive: true,
            #[cfg(test)]
            panic_on_tick: None,
            ticks: 0,
        })
    }

    fn tick(
        &mut self,
        policy: &PolicyNet,
        esce: Option<&EsceModel>,
        mix: RewardMix,
        agent: &AgentConfig,
        train: bool,
    ) -> Result<TickOutput> {
        #[cfg(test)]
        if self.panic_on_tick == Some(self.ticks) {
            panic!("injected fault in worker {}", self.id);
        }
        self.ticks += 1;
        let mut out = TickOutput {
            steps: 0,
            rounds: Vec::new(),
            episodes: Vec::new(),
            grads: None,
        };
        self.buffer.clear();
        while !self.buffer.is_full() {
            let (action, _, value) = policy.act(&self.obs, &mut self.rng, false)?;
            let step = self.env.step(action)?;
            let flagged = match esce {
                Some(m) => m.is_sufficient(&self.obs)?,
                None => false,
            };
            let r_c = self.cal.step(flagged, &step.signal);
            let reward = mix.mix(r_c, step.env_reward);
            out.steps += 1;

            self.flags.push(flagged);
            self.round_calibrated += (r_c != 0.0) as usize;
            self.ep_raw += step.env_reward;
            self.ep_mixed += reward;
            self.ep_calibrated += (r_c != 0.0) as usize;
            self.ep_len += 1;

            let prev = std::mem::replace(&mut self.obs, step.observation);
            self.buffer.push(RolloutStep {
                observation: prev.0.clone(),
                action,
                reward,
                value,
                done: step.done,
            })?;
            if let Some(round) = self.builder.push(prev, step.signal, step.done) {
                out.rounds.push(FinishedRound {
                    round,
                    flags: std::mem::take(&mut self.flags),
                    calibrated: std::mem::take(&mut self.round_calibrated),
                });
            }
            if step.done {
                out.episodes.push(EpisodeStats {
                    episode: self.episode,
                    worker: self.id,
                    raw_env_return: self.ep_raw,
                    mixed_return: self.ep_mixed,
                    calibrated_reward_count: self.ep_calibrated,
                    length: self.ep_len,
                });
                self.episode += 1;
                self.ep_raw = 0.0;
                self.ep_mixed = 0.0;
                self.ep_calibrated = 0;
                self.ep_len = 0;
                self.obs = self.env.reset();
                self.cal.reset();
            }
        }
        if train {
            let last_done = self.buffer.steps().last().is_some_and(|s| s.done);
            let bootstrap = if last_done {
                0.0
            } else {
                policy.evaluate(self.obs.as_slice())?.1
            };
            out.grads = Some(compute_gradients(policy, &self.buffer, bootstrap, agent)?);
        }
        Ok(out)
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Persistent rollout workers; each owns its environment across collection
/// phases so episodes continue where they stopped.
pub struct WorkerPool {
    workers: Vec<Worker>,
    agent: AgentConfig,
    mix: RewardMix,
    /// When false the policy is only evaluated, never updated.
    pub train_policy: bool,
}

impl WorkerPool {
    pub fn new(
        env_config: &EnvConfig,
        agent: &AgentConfig,
        mix: RewardMix,
        calibrated_magnitude: f64,
        seed: u64,
    ) -> Result<Self> {
        agent.validate()?;
        mix.validate()?;
        let workers = (0..agent.workers)
            .map(|id| Worker::new(id, env_config, seed, agent, calibrated_magnitude))
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkerPool {
            workers,
            agent: agent.clone(),
            mix,
            train_policy: true,
        })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn alive(&self) -> usize {
        self.workers.iter().filter(|w| w.alive).count()
    }

    #[cfg(test)]
    fn inject_panic(&mut self, worker: usize, tick: u64) {
        self.workers[worker].panic_on_tick = Some(tick);
    }

    /// Collects until `stop` fires. Calibrated rewards are paid only when
    /// `esce` is given. A failing worker is dropped and reported; collection
    /// fails only when no worker is left.
    pub fn collect(
        &mut self,
        policy: &mut PolicyNet,
        opt: &mut Optimizer,
        pools: &mut PoolSet,
        esce: Option<&EsceModel>,
        stop: StopRule,
    ) -> Result<CollectStats> {
        let mut stats = CollectStats {
            round_pushes: vec![0; self.workers.len()],
            ..Default::default()
        };
        loop {
            let done = match stop {
                StopRule::Steps(n) => stats.steps >= n,
                StopRule::PoolsFull { max_steps } => stats.steps >= max_steps || pools.main_pools_full(),
            };
            if done {
                break;
            }
            if self.alive() == 0 {
                return Err(Error::Worker {
                    worker: stats.failures.last().map_or(0, |f| f.worker),
                    message: "no rollout worker left".into(),
                });
            }
            let outputs = self.tick_all(policy, esce);
            for (id, out) in outputs {
                match out {
                    Err(message) => {
                        self.workers[id].alive = false;
                        stats.failures.push(WorkerFailure { worker: id, message });
                    }
                    Ok(out) => {
                        stats.steps += out.steps;
                        for fr in out.rounds {
                            pools.push_round(&fr.round);
                            if esce.is_some() {
                                pools.record_round(&fr.round, &fr.flags);
                            }
                            stats.round_pushes[id] += 1;
                            stats.round_calibrated.push(fr.calibrated);
                            stats.rounds.push(fr.round);
                        }
                        stats.episodes.extend(out.episodes);
                        match out.grads {
                            None => {}
                            Some(None) => stats.skipped_updates += 1,
                            Some(Some((loss, grads))) => {
                                apply_gradients(policy, opt, grads, self.agent.max_grad_norm)?;
                                stats.updates += 1;
                                stats.last_loss = Some(loss);
                            }
                        }
                    }
                }
            }
        }
        Ok(stats)
    }

    fn tick_all(
        &mut self,
        policy: &PolicyNet,
        esce: Option<&EsceModel>,
    ) -> Vec<(usize, std::result::Result<TickOutput, String>)> {
        let (mix, agent, train) = (self.mix, &self.agent, self.train_policy);
        let run = |w: &mut Worker| {
            let id = w.id;
            let res = catch_unwind(AssertUnwindSafe(|| w.tick(policy, esce, mix, agent, train)));
            let res = match res {
                Ok(Ok(out)) => Ok(out),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(panic_message(p)),
            };
            (id, res)
        };
        let live = self.workers.iter_mut().filter(|w| w.alive);
        if self.agent.workers == 1 {
            return live.map(run).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = live.map(|w| s.spawn(move || run(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panics are caught inside the thread"))
                .collect()
        })
    }
}

/// One collection phase with fresh workers.
#[allow(clippy::too_many_arguments)]
pub fn run_workers(
    k: usize,
    policy: &mut PolicyNet,
    opt: &mut Optimizer,
    pools: &mut PoolSet,
    esce: Option<&EsceModel>,
    mix: RewardMix,
    env_config: &EnvConfig,
    agent: &AgentConfig,
    calibrated_magnitude: f64,
    steps_budget: u64,
    seed: u64,
) -> Result<CollectStats> {
    if k == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    let agent = AgentConfig {
        workers: k,
        ..agent.clone()
    };
    let mut pool = WorkerPool::new(env_config, &agent, mix, calibrated_magnitude, seed)?;
    pool.collect(policy, opt, pools, esce, StopRule::Steps(steps_budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::new_policy_optimizer;
    use crate::rounds::PoolConfig;

    fn setup(k: usize, hindsight: bool) -> (EnvConfig, AgentConfig, PolicyNet, Optimizer, PoolSet) {
        let mut env = EnvConfig::chain(10, 3);
        env.max_episode_steps = 60;
        env.hindsight = hindsight;
        let agent = AgentConfig {
            workers: k,
            hidden: 16,
            ..Default::default()
        };
        let policy = PolicyNet::new(env_dim(&env), 2, agent.hidden, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let opt = new_policy_optimizer(&policy, &agent).unwrap();
        (env, agent, policy, opt, PoolSet::new(&PoolConfig::default()))
    }

    fn env_dim(env: &EnvConfig) -> usize {
        Env::new(env).unwrap().obs_dim()
    }

    #[test]
    fn single_worker_is_deterministic() {
        let run = || {
            let (env, agent, mut policy, mut opt, mut pools) = setup(1, false);
            let stats = run_workers(1, &mut policy, &mut opt, &mut pools, None, RewardMix::BASELINE, &env, &agent, 1.0, 2_000, 7).unwrap();
            (policy, stats.episodes, pools.sizes())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_accounting_with_four_workers() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(4, false);
        let budget = 3_001;
        let stats = run_workers(4, &mut policy, &mut opt, &mut pools, None, RewardMix::BASELINE, &env, &agent, 1.0, budget, 1).unwrap();
        assert!(stats.steps >= budget);
        assert!(stats.steps < budget + 4 * agent.n_steps as u64);
        assert!(stats.failures.is_empty());
    }

    #[test]
    fn pool_insertions_match_worker_pushes() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(4, false);
        let stats = run_workers(4, &mut policy, &mut opt, &mut pools, None, RewardMix::BASELINE, &env, &agent, 1.0, 4_000, 2).unwrap();
        let pushed: u64 = stats.round_pushes.iter().sum();
        assert_eq!(pushed as usize, stats.rounds.len());
        let states: u64 = stats.rounds.iter().map(|r| r.len() as u64).sum();
        assert_eq!(pools.insertions(), states);
        assert!(stats.round_pushes.iter().all(|&n| n > 0));
    }

    #[test]
    fn a_panicking_worker_is_contained() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(3, false);
        let mut wp = WorkerPool::new(&env, &agent, RewardMix::BASELINE, 1.0, 3).unwrap();
        wp.inject_panic(1, 2);
        let stats = wp.collect(&mut policy, &mut opt, &mut pools, None, StopRule::Steps(1_000)).unwrap();
        assert_eq!(stats.failures.len(), 1);
        assert_eq!(stats.failures[0].worker, 1);
        assert!(stats.failures[0].message.contains("injected"));
        assert_eq!(wp.alive(), 2);
        assert!(stats.steps >= 1_000);
    }

    #[test]
    fn all_workers_failing_is_an_error() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(1, false);
        let mut wp = WorkerPool::new(&env, &agent, RewardMix::BASELINE, 1.0, 3).unwrap();
        wp.inject_panic(0, 0);
        assert!(matches!(
            wp.collect(&mut policy, &mut opt, &mut pools, None, StopRule::Steps(100)),
            Err(Error::Worker { .. })
        ));
    }

    #[test]
    fn episode_returns_add_up() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(2, true);
        let stats = run_workers(2, &mut policy, &mut opt, &mut pools, None, RewardMix::BASELINE, &env, &agent, 1.0, 3_000, 4).unwrap();
        assert!(!stats.episodes.is_empty());
        for e in &stats.episodes {
            assert_eq!(e.calibrated_reward_count, 0);
            assert_eq!(e.raw_env_return, e.mixed_return);
            assert!(e.length <= 60);
        }
    }

    #[test]
    fn frozen_policy_is_not_updated() {
        let (env, agent, mut policy, mut opt, mut pools) = setup(1, false);
        let before = policy.clone();
        let mut wp = WorkerPool::new(&env, &agent, RewardMix::BASELINE, 1.0, 5).unwrap();
        wp.train_policy = false;
        let stats = wp.collect(&mut policy, &mut opt, &mut pools, None, StopRule::Steps(500)).unwrap();
        assert_eq!(stats.updates, 0);
        assert_eq!(policy, before);
    }
}
