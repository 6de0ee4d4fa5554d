//! The sufficient-state extractor: a sigmoid classifier trained in two phases.
//!
//! Phase one fits ordinary binary cross-entropy on sensitive-sampled batches
//! from both pools. Phase two then trains on negative states alone, pushing
//! every state that has ever ended a round badly under the threshold until
//! the negative recall reaches `sigma`. What stays above the threshold is the
//! purified set of states that only ever led to positive signals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSignal, Observation};
use crate::error::{Error, Result};
use crate::nn::{mlp_spec, Activation, DenseNet, Gradients, Loss, Method, Optimizer};
use crate::rounds::{Label, LabeledState, Pool, PoolSet, Round};

/// Lower edge of the tuned purification band.
pub const SIGMA_MIN: f64 = 0.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsceConfig {
    pub tau: f64,
    pub sigma: f64,
    pub phase1_epochs: usize,
    pub phase2_max_iters: usize,
    pub batch_size: usize,
    pub sensitive_fraction: f64,
    pub learning_rate: f64,
    pub optimizer: Method,
    pub hidden: usize,
    pub calibrated_magnitude: f64,
}

impl Default for EsceConfig {
    fn default() -> Self {
        EsceConfig {
            tau: 0.5,
            sigma: 0.95,
            phase1_epochs: 3,
            phase2_max_iters: 500,
            batch_size: 64,
            sensitive_fraction: 0.75,
            learning_rate: 1e-3,
            optimizer: Method::Adam,
            hidden: 64,
            calibrated_magnitude: 1.0,
        }
    }
}

impl EsceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(SIGMA_MIN..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!(
                "sigma must lie in [{SIGMA_MIN}, 1], got {}",
                self.sigma
            )));
        }
        if self.phase1_epochs == 0 || self.phase2_max_iters == 0 || self.batch_size == 0 {
            return Err(Error::Config("phase budgets and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sensitive_fraction) {
            return Err(Error::Config("sensitive_fraction must lie in [0, 1]".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.calibrated_magnitude > 0.0) {
            return Err(Error::Config("calibrated_magnitude must be positive".into()));
        }
        Ok(())
    }
}

/// Classifier parameters plus decision settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EsceModel {
    pub net: DenseNet,
    pub tau: f64,
    pub sigma: f64,
    pub phase1_epochs: usize,
    pub phase2_max_iters: usize,
    /// Completed training rounds (phase one + phase two).
    pub updates: u64,
}

impl EsceModel {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, config: &EsceConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = DenseNet::new(obs_dim, &mlp_spec(config.hidden, (1, Activation::Sigmoid)), rng)?;
        Self::with_net(net, config)
    }

    pub fn with_net(net: DenseNet, config: &EsceConfig) -> Result<Self> {
        if net.output_dim() != 1 || net.layers().last().map(|l| l.activation) != Some(Activation::Sigmoid) {
            return Err(Error::Shape("extractor needs a single sigmoid output".into()));
        }
        Ok(EsceModel {
            net,
            tau: config.tau,
            sigma: config.sigma,
            phase1_epochs: config.phase1_epochs,
            phase2_max_iters: config.phase2_max_iters,
            updates: 0,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.updates > 0
    }

    /// Clamped probability that `obs` is a sufficient state.
    pub fn predict(&self, obs: &Observation) -> Result<f64> {
        Ok(crate::nn::clamp_prob(self.net.forward(obs.as_slice())?[0]))
    }

    pub fn is_sufficient(&self, obs: &Observation) -> Result<bool> {
        Ok(self.predict(obs)? >= self.tau)
    }

    /// Fraction of `pool` predicted below the threshold (0 for an empty pool).
    pub fn negative_recall(&self, pool: &Pool) -> Result<f64> {
        if pool.is_empty() {
            return Ok(0.0);
        }
        let mut below = 0usize;
        for s in pool.iter() {
            if self.predict(&s.observation)? < self.tau {
                below += 1;
            }
        }
        Ok(below as f64 / pool.len() as f64)
    }

    fn batch_gradients(&self, batch: &[LabeledState]) -> Result<(f64, Gradients)> {
        let mut total = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        for s in batch {
            let (l, g) = self.net.backward(
                s.observation.as_slice(),
                Loss::Bce {
                    label: s.label.target(),
                },
            )?;
            loss += l;
            total.add_assign(&g)?;
        }
        let n = batch.len() as f64;
        total.scale(1.0 / n);
        Ok((loss / n, total))
    }

    /// One optimizer step on the mean BCE of `batch`; returns the batch loss
    /// before the step.
    pub fn train_batch(&mut self, batch: &[LabeledState], opt: &mut Optimizer) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let (loss, grads) = self.batch_gradients(batch)?;
        opt.apply(&mut self.net, &grads)?;
        if !self.net.is_finite() {
            return Err(Error::Shape("extractor parameters became non-finite".into()));
        }
        Ok(loss)
    }
}

pub fn new_optimizer(model: &EsceModel, config: &EsceConfig) -> Result<Optimizer> {
    Optimizer::for_net(config.optimizer, config.learning_rate, &model.net)
}

/// Phase one: `phase1_epochs` passes of sensitive-sampled BCE batches over
/// both pools. Returns the mean loss of the final epoch.
pub fn train_phase1<R: Rng + ?Sized>(
    model: &mut EsceModel,
    opt: &mut Optimizer,
    pools: &PoolSet,
    batch_size: usize,
    sensitive_fraction: f64,
    rng: &mut R,
) -> Result<f64> {
    if pools.positive.is_empty() {
        return Err(Error::EmptyPool("positive"));
    }
    if pools.negative.is_empty() {
        return Err(Error::EmptyPool("negative"));
    }
    let batch_size = batch_size.max(1);
    let per_epoch = (pools.positive.len() + pools.negative.len()).div_ceil(batch_size);
    let mut last = 0.0;
    for _ in 0..model.phase1_epochs {
        let mut sum = 0.0;
        for _ in 0..per_epoch {
            let batch = pools.sample_batch(batch_size, sensitive_fraction, rng)?;
            sum += model.train_batch(&batch, opt)?;
        }
        last = sum / per_epoch as f64;
    }
    Ok(last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Outcome {
    pub iterations: usize,
    /// Whether the recall target was met (false means the budget ran out).
    pub reached: bool,
    pub recall_neg: f64,
}

/// Phase two: negative-only batches minimising `-log(1 - p)` until the
/// negative recall over the whole pool reaches `sigma`, or the iteration
/// budget is spent.
pub fn train_phase2<R: Rng + ?Sized>(
    model: &mut EsceModel,
    opt: &mut Optimizer,
    negative: &Pool,
    sigma: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Phase2Outcome> {
    if negative.is_empty() {
        return Err(Error::EmptyPool("negative"));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Config(format!("sigma must lie in (0, 1], got {sigma}")));
    }
    let batch_size = batch_size.max(1);
    let mut recall = model.negative_recall(negative)?;
    let mut iterations = 0;
    while recall < sigma && iterations < model.phase2_max_iters {
        let batch: Vec<LabeledState> = (0..batch_size)
            .map(|_| {
                let s = negative.get(rng.random_range(0..negative.len()));
                LabeledState {
                    observation: s.observation.clone(),
                    label: Label::Negative,
                }
            })
            .collect();
        model.train_batch(&batch, opt)?;
        iterations += 1;
        recall = model.negative_recall(negative)?;
    }
    Ok(Phase2Outcome {
        iterations,
        reached: recall >= sigma,
        recall_neg: recall,
    })
}

/// Round-level identification quality.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EsceMetrics {
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub recall_neg: f64,
    pub n_ident: usize,
    pub n_suff: usize,
    pub n_pos: usize,
}

impl EsceMetrics {
    /// Builds the ratios from round counts and per-round flag presence.
    pub fn from_flags(rounds: &[Round], flagged: &[bool], recall_neg: f64) -> Self {
        let mut m = EsceMetrics {
            recall_neg,
            ..Default::default()
        };
        for (r, &f) in rounds.iter().zip(flagged) {
            let positive = r.label == Label::Positive;
            m.n_pos += positive as usize;
            m.n_ident += f as usize;
            m.n_suff += (f && positive) as usize;
        }
        m.precision_pos = ratio(m.n_suff, m.n_ident);
        m.recall_pos = ratio(m.n_suff, m.n_pos);
        m
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of positive rounds, plus negative recall on `negative`.
pub fn evaluate(model: &EsceModel, rounds: &[Round], negative: &Pool) -> Result<EsceMetrics> {
    let mut flagged = Vec::with_capacity(rounds.len());
    for r in rounds {
        let mut any = false;
        for s in &r.states {
            if model.is_sufficient(s)? {
                any = true;
                break;
            }
        }
        flagged.push(any);
    }
    Ok(EsceMetrics::from_flags(rounds, &flagged, model.negative_recall(negative)?))
}

/// Once-per-round calibrated reward bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub rewarded_this_round: bool,
    pub calibrated_magnitude: f64,
}

impl CalibrationState {
    pub fn new(calibrated_magnitude: f64) -> Self {
        CalibrationState {
            rewarded_this_round: false,
            calibrated_magnitude,
        }
    }

    /// Reward for a state already classified as `flagged`; any signal starts a
    /// new round.
    pub fn step(&mut self, flagged: bool, signal: &EnvSignal) -> f64 {
        let reward = if flagged && !self.rewarded_this_round {
            self.rewarded_this_round = true;
            self.calibrated_magnitude
        } else {
            0.0
        };
        if !signal.is_none() {
            self.rewarded_this_round = false;
        }
        reward
    }

    pub fn reset(&mut self) {
        self.rewarded_this_round = false;
    }
}

pub fn calibrate(
    model: &EsceModel,
    obs: &Observation,
    cal: &mut CalibrationState,
    signal: &EnvSignal,
) -> Result<f64> {
    let flagged = model.is_sufficient(obs)?;
    Ok(cal.step(flagged, signal))
}
