use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax without forming the probabilities first.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// A fully connected layer. Weights are stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn uniform<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Layer {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Per-layer values recorded during a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[k]` is the input to layer k; the final entry is the network output.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients, shaped exactly like the network they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn congruent(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.len() == b.weights.len() && a.bias.len() == b.bias.len()
            })
    }

    pub fn congruent_with(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len()
            })
    }
}

/// Scalar loss attached to the network output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss<'a> {
    /// Binary cross-entropy on a single probability output, `label` in [0, 1].
    Bce { label: f64 },
    /// Sum of squared errors, `sum_i (out_i - target_i)^2`.
    Squared { target: &'a [f64] },
    /// `-advantage * log softmax(out)[action]`, with the output read as logits.
    PolicyGradient { action: usize, advantage: f64 },
}

/// Dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a randomly initialised network. `spec` lists `(units, activation)`
    /// for each layer in order.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        spec: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(units, act) in spec {
            layers.push(Layer::uniform(fan_in, units, act, rng));
            fan_in = units;
        }
        Self::from_layers(input_dim, layers)
    }

    pub fn zeros(input_dim: usize, spec: &[(usize, Activation)]) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(units, act) in spec {
            layers.push(Layer::zeros(fan_in, units, act));
            fan_in = units;
        }
        Self::from_layers(input_dim, layers)
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Shape("input dimension must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        let mut fan_in = input_dim;
        for (k, l) in layers.iter().enumerate() {
            if l.inputs != fan_in || l.outputs == 0 {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but receives {fan_in}",
                    l.inputs
                )));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape(format!("layer {k} parameter arrays are mis-sized")));
            }
            fan_in = l.outputs;
        }
        Ok(DenseNet { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has length {} but the network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l
                .pre_activation(&a)
                .into_iter()
                .map(|z| l.activation.apply(z))
                .collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for l in &self.layers {
            let z = l.pre_activation(activations.last().unwrap());
            activations.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { activations, pre })
    }

    /// Backpropagates `d_out = dL/d(output)` through the network, returning the
    /// parameter gradients and `dL/d(input)`.
    pub fn backprop(&self, trace: &Trace, d_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let last = self.layers.len() - 1;
        if d_out.len() != self.layers[last].outputs {
            return Err(Error::Shape("output gradient has the wrong length".into()));
        }
        let act = self.layers[last].activation;
        let delta = d_out
            .iter()
            .zip(&trace.pre[last])
            .zip(&trace.activations[last + 1])
            .map(|((g, &z), &a)| g * act.derivative(z, a))
            .collect();
        Ok(self.backprop_pre(trace, delta))
    }

    /// Backprop starting from the gradient w.r.t. the final pre-activation.
    pub fn backprop_pre(&self, trace: &Trace, mut delta: Vec<f64>) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.activations[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, &x)| *w = d * x);
            }
            let mut d_input = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                d_input.iter_mut().zip(row).for_each(|(acc, &w)| *acc += d * w);
            }
            if k == 0 {
                return (grads, d_input);
            }
            let prev = &self.layers[k - 1];
            delta = d_input
                .iter()
                .zip(&trace.pre[k - 1])
                .zip(&trace.activations[k])
                .map(|((g, &z), &a)| g * prev.activation.derivative(z, a))
                .collect();
        }
        unreachable!("network has at least one layer")
    }

    /// Loss value and exact parameter gradients for one input.
    pub fn backward(&self, x: &[f64], loss: Loss<'_>) -> Result<(f64, Gradients)> {
        let trace = self.forward_trace(x)?;
        let out = trace.output();
        let (value, grads) = match loss {
            Loss::Bce { label } => {
                if out.len() != 1 {
                    return Err(Error::Shape("bce needs a single output".into()));
                }
                let p = out[0];
                let pc = clamp_prob(p);
                let value = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
                let last = self.layers.len() - 1;
                let grads = if self.layers[last].activation == Activation::Sigmoid {
                    // dL/dz = p - y, exact on the unclamped sigmoid.
                    self.backprop_pre(&trace, vec![p - label]).0
                } else {
                    let d = -label / pc + (1.0 - label) / (1.0 - pc);
                    self.backprop(&trace, &[d])?.0
                };
                (value, grads)
            }
            Loss::Squared { target } => {
                if target.len() != out.len() {
                    return Err(Error::Shape(format!(
                        "target has length {} but output has {}",
                        target.len(),
                        out.len()
                    )));
                }
                let diff: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
                let value = diff.iter().map(|d| d * d).sum();
                let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
                (value, self.backprop(&trace, &d_out)?.0)
            }
            Loss::PolicyGradient { action, advantage } => {
                if action >= out.len() {
                    return Err(Error::InvalidAction {
                        action,
                        num_actions: out.len(),
                    });
                }
                let logp = log_softmax(out);
                let probs = softmax(out);
                let value = -advantage * logp[action];
                let d_out: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| advantage * (p - if j == action { 1.0 } else { 0.0 }))
                    .collect();
                (value, self.backprop(&trace, &d_out)?.0)
            }
        };
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = Layer::zeros(2, 2, Activation::Identity);
        layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        let net = DenseNet::from_layers(2, vec![layer]).unwrap();
        assert_eq!(net.forward(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = DenseNet::zeros(3, &[(1, Activation::Sigmoid)]).unwrap();
        assert_eq!(net.forward(&[5.0, -2.0, 0.1]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = DenseNet::zeros(3, &[(1, Activation::Sigmoid)]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn from_layers_rejects_broken_chain() {
        let a = Layer::zeros(2, 3, Activation::Tanh);
        let b = Layer::zeros(4, 1, Activation::Sigmoid);
        assert!(DenseNet::from_layers(2, vec![a, b]).is_err());
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let net = DenseNet::zeros(2, &[(1, Activation::Sigmoid)]).unwrap();
        let (loss, _) = net.backward(&[0.4, 0.9], Loss::Bce { label: 1.0 }).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_stays_finite_when_saturated() {
        let mut layer = Layer::zeros(1, 1, Activation::Sigmoid);
        layer.bias[0] = 1000.0;
        let net = DenseNet::from_layers(1, vec![layer]).unwrap();
        let (loss, g) = net.backward(&[0.0], Loss::Bce { label: 0.0 }).unwrap();
        assert!(loss.is_finite());
        assert!((loss - -(PROB_CLAMP.ln())).abs() < 1e-6);
        assert!(g.is_finite());
    }

    #[test]
    fn squared_loss_at_own_output_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(
            3,
            &[(5, Activation::Tanh), (2, Activation::Identity)],
            &mut rng,
        )
        .unwrap();
        let x = [0.2, -0.4, 0.9];
        let out = net.forward(&x).unwrap();
        let (loss, g) = net.backward(&x, Loss::Squared { target: &out }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn policy_gradient_rejects_bad_action() {
        let net = DenseNet::zeros(2, &[(3, Activation::Identity)]).unwrap();
        let r = net.backward(
            &[0.0, 0.0],
            Loss::PolicyGradient {
                action: 3,
                advantage: 1.0,
            },
        );
        assert!(matches!(r, Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn softmax_sums_to_one_for_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(16, &[(8, Activation::Tanh)], &mut rng).unwrap();
        let bound = 0.25;
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= bound));
    }
}
