use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over a fixed list of flat parameter slices.
///
/// Moment arrays are allocated up front from the slice lengths and every
/// update checks that the parameters and gradients still match them.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    method: Method,
    lr: f64,
    shapes: Vec<usize>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64, shapes: Vec<usize>) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let (first, second) = match method {
            Method::Sgd => (Vec::new(), Vec::new()),
            Method::Adam => (
                shapes.iter().map(|&n| vec![0.0; n]).collect(),
                shapes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Ok(Optimizer {
            method,
            lr,
            shapes,
            first,
            second,
            step: 0,
        })
    }

    pub fn for_net(method: Method, lr: f64, net: &DenseNet) -> Result<Self> {
        Self::new(method, lr, net.param_slices().iter().map(|s| s.len()).collect())
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    /// Drops accumulated moments and the step counter.
    pub fn reset(&mut self) {
        for m in self.first.iter_mut().chain(self.second.iter_mut()) {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        self.step = 0;
    }

    pub fn apply(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(net) {
            return Err(Error::Shape("gradients do not match the network".into()));
        }
        self.apply_slices(net.param_slices_mut(), grads.slices())
    }

    pub fn apply_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let congruent = params.len() == self.shapes.len()
            && grads.len() == self.shapes.len()
            && params
                .iter()
                .zip(&grads)
                .zip(&self.shapes)
                .all(|((p, g), &n)| p.len() == n && g.len() == n);
        if !congruent {
            return Err(Error::Shape("parameters do not match optimizer state".into()));
        }
        self.step += 1;
        match self.method {
            Method::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= self.lr * g);
                }
            }
            Method::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for j in 0..p.len() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        p[j] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
