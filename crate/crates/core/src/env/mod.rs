//! Delayed-reward environments, the hindsight wrapper, and the exact
//! sufficiency oracle.
//!
//! * `delayed-chain`: a 1-D corridor. Left/right moves; the last `corridor`
//!   cells carry the agent to the goal whatever it does, and the step into
//!   that region fails (death) with probability `entry_failure`. Reaching the
//!   goal pays +1 and restarts the agent at cell 0 within the same episode.
//! * `trap-grid`: a gridworld with four moves, a trap (death, episode over)
//!   and a goal that pays +1 only after `reward_delay` steps held on it, then
//!   restarts the agent.
//!
//! Both truncate at `max_episode_steps` with a negative `episode_end` signal.

mod config;
mod hindsight;
mod oracle;
mod signal;
mod world;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{ChainParams, EnvConfig, EnvName, GridParams};
pub use hindsight::{hindsight_wrap, HindsightFilter};
pub use oracle::{
    expected_return, optimal_return, sufficiency_oracle, OracleEntry, OracleReport,
    DEFAULT_EPSILON, MAX_ENUMERABLE_STATES,
};
pub use signal::{EnvSignal, NegativeCause, Observation, SignalKind, StepResult};
pub use world::{Outcome, World, WorldState, GOAL_REWARD};

use crate::error::{Error, Result};

/// A live episode over one of the built-in worlds.
#[derive(Debug, Clone)]
pub struct Env {
    world: World,
    state: WorldState,
    rng: ChaCha8Rng,
    done: bool,
    hindsight: Option<HindsightFilter>,
}

impl Env {
    pub fn new(config: &EnvConfig) -> Result<Self> {
        let world = World::from_config(config)?;
        Ok(Env {
            state: world.initial(),
            world,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            done: false,
            hindsight: config.hindsight.then(HindsightFilter::new),
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn state(&self) -> WorldState {
        self.state
    }

    pub fn num_actions(&self) -> usize {
        self.world.num_actions()
    }

    pub fn obs_dim(&self) -> usize {
        self.world.obs_dim()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Observation {
        self.state = self.world.initial();
        self.done = false;
        if let Some(h) = &mut self.hindsight {
            h.reset();
        }
        self.world.observe(&self.state)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let num_actions = self.world.num_actions();
        if action >= num_actions {
            return Err(Error::InvalidAction {
                action,
                num_actions,
            });
        }
        let outcomes = self.world.outcomes(&self.state, action);
        let outcome = if outcomes.len() == 1 {
            outcomes[0]
        } else {
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            *outcomes
                .iter()
                .find(|o| {
                    acc += o.prob;
                    u < acc
                })
                .unwrap_or_else(|| outcomes.last().expect("outcomes are non-empty"))
        };
        self.state = outcome.next;
        self.done = outcome.done;
        let result = StepResult {
            observation: self.world.observe(&self.state),
            env_reward: outcome.reward,
            signal: outcome.signal,
            done: outcome.done,
        };
        Ok(match &mut self.hindsight {
            Some(h) => h.filter(result),
            None => result,
        })
    }
}
