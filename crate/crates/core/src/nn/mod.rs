//! Dense feed-forward networks with hand-written backpropagation.

mod checkpoint;
mod dense;
mod optim;

pub use checkpoint::{Checkpoint, FORMAT_TAG};
pub use dense::{
    clamp_prob, log_softmax, sigmoid, softmax, Activation, DenseNet, Gradients, Layer, LayerGrad,
    Loss, Trace, PROB_CLAMP,
};
pub use optim::{Method, Optimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

/// Two tanh hidden layers of `hidden` units followed by `head`.
pub fn mlp_spec(hidden: usize, head: (usize, Activation)) -> Vec<(usize, Activation)> {
    vec![(hidden, Activation::Tanh), (hidden, Activation::Tanh), head]
}
