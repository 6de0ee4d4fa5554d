use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, Activation, Checkpoint, DenseNet, Gradients, Layer};

/// Shared tanh trunk with a logit head and a scalar value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk: DenseNet,
    pub policy_head: DenseNet,
    pub value_head: DenseNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub trunk: Gradients,
    pub policy_head: Gradients,
    pub value_head: Gradients,
}

impl PolicyGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.slices();
        v.extend(self.policy_head.slices());
        v.extend(self.value_head.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.slices_mut();
        v.extend(self.policy_head.slices_mut());
        v.extend(self.value_head.slices_mut());
        v
    }

    pub fn norm(&self) -> f64 {
        (self.trunk.squared_norm() + self.policy_head.squared_norm() + self.value_head.squared_norm())
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite() && self.policy_head.is_finite() && self.value_head.is_finite()
    }
}

/// One training sample for the actor-critic surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub ret: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, num_actions: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let trunk = DenseNet::new(obs_dim, &[(hidden, Activation::Tanh), (hidden, Activation::Tanh)], rng)?;
        let policy_head = DenseNet::new(hidden, &[(num_actions, Activation::Identity)], rng)?;
        let value_head = DenseNet::new(hidden, &[(1, Activation::Identity)], rng)?;
        Self::from_parts(trunk, policy_head, value_head)
    }

    pub fn from_parts(trunk: DenseNet, policy_head: DenseNet, value_head: DenseNet) -> Result<Self> {
        if policy_head.input_dim() != trunk.output_dim() || value_head.input_dim() != trunk.output_dim() {
            return Err(Error::Shape("heads must read the trunk output".into()));
        }
        if value_head.output_dim() != 1 {
            return Err(Error::Shape("value head must be scalar".into()));
        }
        Ok(PolicyNet {
            trunk,
            policy_head,
            value_head,
        })
    }

    /// Uniform policy and zero value: all head parameters zero.
    pub fn zero_heads(mut self) -> Self {
        for l in self
            .policy_head
            .layers_mut()
            .iter_mut()
            .chain(self.value_head.layers_mut().iter_mut())
        {
            *l = Layer::zeros(l.inputs, l.outputs, l.activation);
        }
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.policy_head.output_dim()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.param_slices_mut();
        v.extend(self.policy_head.param_slices_mut());
        v.extend(self.value_head.param_slices_mut());
        v
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.trunk.param_slices().iter().map(|s| s.len()).collect();
        v.extend(self.policy_head.param_slices().iter().map(|s| s.len()));
        v.extend(self.value_head.param_slices().iter().map(|s| s.len()));
        v
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite() && self.policy_head.is_finite() && self.value_head.is_finite()
    }

    /// `(logits, value)` for one observation.
    pub fn evaluate(&self, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let h = self.trunk.forward(obs)?;
        let logits = self.policy_head.forward(&h)?;
        let value = self.value_head.forward(&h)?[0];
        Ok((logits, value))
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.evaluate(obs)?.0))
    }

    /// Samples an action (or takes the argmax when `greedy`); returns the
    /// action, its log-probability and the value estimate.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R, greedy: bool) -> Result<(usize, f64, f64)> {
        let (logits, value) = self.evaluate(obs.as_slice())?;
        let logp = log_softmax(&logits);
        let action = if greedy {
            argmax(&logits)
        } else {
            sample_categorical(&softmax(&logits), rng)
        };
        Ok((action, logp[action], value))
    }

    /// Mean over `samples` of
    /// `-log pi(a|s) * A + value_coeff * (R - V(s))^2 - entropy_coeff * H(pi(.|s))`
    /// and its exact gradient. Advantages are treated as constants.
    pub fn surrogate(
        &self,
        samples: &[Sample<'_>],
        entropy_coeff: f64,
        value_coeff: f64,
    ) -> Result<(SurrogateLoss, PolicyGrads)> {
        let mut grads = PolicyGrads {
            trunk: Gradients::zeros_like(&self.trunk),
            policy_head: Gradients::zeros_like(&self.policy_head),
            value_head: Gradients::zeros_like(&self.value_head),
        };
        let mut loss = SurrogateLoss::default();
        if samples.is_empty() {
            return Ok((loss, grads));
        }
        let n = samples.len() as f64;
        for s in samples {
            if s.action >= self.num_actions() {
                return Err(Error::InvalidAction {
                    action: s.action,
                    num_actions: self.num_actions(),
                });
            }
            let trunk_trace = self.trunk.forward_trace(s.observation)?;
            let h = trunk_trace.output();
            let p_trace = self.policy_head.forward_trace(h)?;
            let v_trace = self.value_head.forward_trace(h)?;
            let logits = p_trace.output();
            let value = v_trace.output()[0];
            let probs = softmax(logits);
            let logp = log_softmax(logits);
            let ent = entropy(&probs);

            loss.policy += -logp[s.action] * s.advantage / n;
            loss.value += value_coeff * (s.ret - value).powi(2) / n;
            loss.entropy += ent / n;

            // dL/dlogit_j = A (pi_j - [j = a]) + c_e pi_j (log pi_j + H)
            let d_logits: Vec<f64> = probs
                .iter()
                .zip(&logp)
                .enumerate()
                .map(|(j, (&p, &lp))| {
                    let onehot = if j == s.action { 1.0 } else { 0.0 };
                    (s.advantage * (p - onehot) + entropy_coeff * p * (lp + ent)) / n
                })
                .collect();
            let d_value = [2.0 * value_coeff * (value - s.ret) / n];

            let (gp, dh_p) = self.policy_head.backprop(&p_trace, &d_logits)?;
            let (gv, dh_v) = self.value_head.backprop(&v_trace, &d_value)?;
            let dh: Vec<f64> = dh_p.iter().zip(&dh_v).map(|(a, b)| a + b).collect();
            let (gt, _) = self.trunk.backprop(&trunk_trace, &dh)?;
            grads.policy_head.add_assign(&gp)?;
            grads.value_head.add_assign(&gv)?;
            grads.trunk.add_assign(&gt)?;
        }
        loss.total = loss.policy + loss.value - entropy_coeff * loss.entropy;
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.insert("policy.trunk", self.trunk.clone());
        ckpt.insert("policy.logits", self.policy_head.clone());
        ckpt.insert("policy.value", self.value_head.clone());
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ckpt.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing net `{name}`")))
        };
        Self::from_parts(get("policy.trunk")?, get("policy.logits")?, get("policy.value")?)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
