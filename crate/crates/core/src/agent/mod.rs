//! Advantage actor-critic over mixed calibrated and environmental rewards.

mod policy;
mod workers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Method, Optimizer};

pub use policy::{argmax, entropy, sample_categorical, PolicyGrads, PolicyNet, Sample, SurrogateLoss};
pub use workers::{run_workers, CollectStats, EpisodeStats, StopRule, WorkerFailure, WorkerPool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub n_steps: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub learning_rate: f64,
    pub optimizer: Method,
    pub hidden: usize,
    pub workers: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            n_steps: 8,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            learning_rate: 7e-4,
            optimizer: Method::Adam,
            hidden: 64,
            workers: 1,
            max_grad_norm: 0.5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.n_steps == 0 || self.hidden == 0 || self.workers == 0 {
            return bad("n_steps, hidden and workers must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("entropy_coeff", self.entropy_coeff),
            ("value_coeff", self.value_coeff),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

/// Weights of the calibrated (`alpha`) and environmental (`beta`) rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardMix {
    pub alpha: f64,
    pub beta: f64,
}

impl RewardMix {
    pub const BASELINE: RewardMix = RewardMix { alpha: 0.0, beta: 1.0 };
    pub const SEMI: RewardMix = RewardMix { alpha: 0.3, beta: 1.0 };
    pub const FULL: RewardMix = RewardMix { alpha: 1.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let mix = RewardMix { alpha, beta };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(format!(
                "reward weights must be finite and non-negative, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }

    pub fn mix(&self, calibrated: f64, environmental: f64) -> f64 {
        mix_rewards(calibrated, environmental, *self)
    }
}

pub fn mix_rewards(calibrated: f64, environmental: f64, mix: RewardMix) -> f64 {
    mix.alpha * calibrated + mix.beta * environmental
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    steps: Vec<RolloutStep>,
    n_steps: usize,
    gamma: f64,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, gamma: f64) -> Self {
        RolloutBuffer {
            steps: Vec::with_capacity(n_steps),
            n_steps: n_steps.max(1),
            gamma,
        }
    }

    pub fn push(&mut self, step: RolloutStep) -> Result<()> {
        if self.is_full() {
            return Err(Error::Shape(format!("rollout buffer holds at most {} steps", self.n_steps)));
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn steps(&self) -> &[RolloutStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() >= self.n_steps
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Discounted n-step returns, cut at episode ends and seeded with
/// `bootstrap` when the buffer stops mid-episode.
pub fn compute_returns(buffer: &RolloutBuffer, bootstrap: f64) -> Returns {
    let n = buffer.len();
    let mut returns = vec![0.0; n];
    let mut next = bootstrap;
    for (i, s) in buffer.steps.iter().enumerate().rev() {
        if s.done {
            next = 0.0;
        }
        next = s.reward + buffer.gamma * next;
        returns[i] = next;
    }
    let advantages = returns.iter().zip(&buffer.steps).map(|(r, s)| r - s.value).collect();
    Returns { returns, advantages }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub loss: SurrogateLoss,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// True when the update was dropped because of non-finite inputs.
    pub skipped: bool,
}

/// Surrogate loss and gradient for one buffer, or `None` when an advantage or
/// gradient is not finite.
pub fn compute_gradients(
    policy: &PolicyNet,
    buffer: &RolloutBuffer,
    bootstrap: f64,
    config: &AgentConfig,
) -> Result<Option<(SurrogateLoss, PolicyGrads)>> {
    let ret = compute_returns(buffer, bootstrap);
    if ret.advantages.iter().any(|a| !a.is_finite()) {
        return Ok(None);
    }
    let samples: Vec<Sample<'_>> = buffer
        .steps
        .iter()
        .zip(ret.returns.iter().zip(&ret.advantages))
        .map(|(s, (&r, &a))| Sample {
            observation: &s.observation,
            action: s.action,
            ret: r,
            advantage: a,
        })
        .collect();
    let (loss, grads) = policy.surrogate(&samples, config.entropy_coeff, config.value_coeff)?;
    if !grads.is_finite() || !loss.total.is_finite() {
        return Ok(None);
    }
    Ok(Some((loss, grads)))
}

/// Clips and applies one gradient; returns the unclipped norm.
pub fn apply_gradients(
    policy: &mut PolicyNet,
    opt: &mut Optimizer,
    mut grads: PolicyGrads,
    max_grad_norm: f64,
) -> Result<f64> {
    let norm = grads.norm();
    if max_grad_norm > 0.0 && norm > max_grad_norm {
        grads.scale(max_grad_norm / norm);
    }
    opt.apply_slices(policy.param_slices_mut(), grads.slices())?;
    Ok(norm)
}

pub fn new_policy_optimizer(policy: &PolicyNet, config: &AgentConfig) -> Result<Optimizer> {
    Optimizer::new(config.optimizer, config.learning_rate, policy.param_shapes())
}

/// One actor-critic step on `buffer`.
pub fn update(
    policy: &mut PolicyNet,
    opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    bootstrap: f64,
    config: &AgentConfig,
) -> Result<UpdateReport> {
    match compute_gradients(policy, buffer, bootstrap, config)? {
        None => Ok(UpdateReport {
            skipped: true,
            ..Default::default()
        }),
        Some((loss, grads)) => {
            let grad_norm = apply_gradients(policy, opt, grads, config.max_grad_norm)?;
            Ok(UpdateReport {
                loss,
                grad_norm,
                skipped: false,
            })
        }
    }
}
