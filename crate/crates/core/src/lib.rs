//! Empirical sufficient-state extraction for delayed-reward reinforcement
//! learning.
//!
//! A purified binary classifier learns which states lead, under the current
//! policy, to a positive environmental signal. Flagged states earn a
//! calibrated reward at most once per round, which an advantage actor-critic
//! agent mixes with the environment's own reward.

pub mod agent;
pub mod env;
pub mod error;
pub mod esce;
pub mod harness;
pub mod nn;
pub mod rounds;

pub use error::{Error, Result};
