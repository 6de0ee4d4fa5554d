//! Explicit transition models for the built-in environments.
//!
//! Both the sampling environment and the exact oracle read dynamics from
//! [`World::outcomes`], so the two can never drift apart.

use super::config::{EnvConfig, EnvName};
use super::signal::{EnvSignal, Observation};
use crate::error::Result;

/// Full Markov state: position, goal countdown, and elapsed steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorldState {
    pub cell: usize,
    pub countdown: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub prob: f64,
    pub next: WorldState,
    pub reward: f64,
    pub signal: EnvSignal,
    pub done: bool,
}

pub const GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Chain {
        length: usize,
        corridor_start: usize,
        entry_failure: f64,
        horizon: usize,
    },
    Grid {
        width: usize,
        height: usize,
        start: usize,
        goal: usize,
        trap: usize,
        reward_delay: usize,
        horizon: usize,
    },
}

impl World {
    pub fn from_config(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config.name {
            EnvName::DelayedChain => World::Chain {
                length: config.chain.length,
                corridor_start: config.chain.length - config.chain.corridor,
                entry_failure: config.chain.entry_failure,
                horizon: config.max_episode_steps,
            },
            EnvName::TrapGrid => {
                let g = &config.grid;
                let idx = |[x, y]: [usize; 2]| y * g.width + x;
                World::Grid {
                    width: g.width,
                    height: g.height,
                    start: idx(g.start),
                    goal: idx(g.goal),
                    trap: idx(g.trap),
                    reward_delay: g.reward_delay,
                    horizon: config.max_episode_steps,
                }
            }
        })
    }

    pub fn horizon(&self) -> usize {
        match *self {
            World::Chain { horizon, .. } | World::Grid { horizon, .. } => horizon,
        }
    }

    pub fn num_cells(&self) -> usize {
        match *self {
            World::Chain { length, .. } => length,
            World::Grid { width, height, .. } => width * height,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            World::Chain { .. } => 2,
            World::Grid { .. } => 4,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.num_cells() + 1
    }

    pub fn initial(&self) -> WorldState {
        let cell = match *self {
            World::Chain { .. } => 0,
            World::Grid { start, .. } => start,
        };
        WorldState {
            cell,
            countdown: 0,
            t: 0,
        }
    }

    /// One-hot position plus elapsed fraction of the step budget.
    pub fn observe(&self, s: &WorldState) -> Observation {
        let mut v = vec![0.0; self.obs_dim()];
        v[s.cell] = 1.0;
        v[self.num_cells()] = (s.t as f64 / self.horizon() as f64).min(1.0);
        Observation(v)
    }

    /// Every non-terminal state the dynamics can produce, ordered by time.
    pub fn states_at(&self, t: usize) -> Vec<WorldState> {
        let at = |cell, countdown| WorldState { cell, countdown, t };
        match *self {
            World::Chain { length, .. } => (0..length - 1).map(|c| at(c, 0)).collect(),
            World::Grid {
                width,
                height,
                goal,
                trap,
                reward_delay,
                ..
            } => {
                let mut out: Vec<WorldState> = (0..width * height)
                    .filter(|&c| c != goal && c != trap)
                    .map(|c| at(c, 0))
                    .collect();
                out.extend((1..=reward_delay).map(|k| at(goal, k)));
                out
            }
        }
    }

    pub fn state_count(&self) -> usize {
        (0..self.horizon()).map(|t| self.states_at(t).len()).sum()
    }

    /// Transition distribution for `action` taken in `s` (with `s.t < horizon`).
    pub fn outcomes(&self, s: &WorldState, action: usize) -> Vec<Outcome> {
        let t = s.t + 1;
        let mut out = match *self {
            World::Chain {
                length,
                corridor_start,
                entry_failure,
                ..
            } => {
                let moved = |cell: usize| {
                    if cell == length - 1 {
                        Outcome {
                            prob: 1.0,
                            next: WorldState { cell: 0, countdown: 0, t },
                            reward: GOAL_REWARD,
                            signal: EnvSignal::positive(GOAL_REWARD),
                            done: false,
                        }
                    } else {
                        Outcome {
                            prob: 1.0,
                            next: WorldState { cell, countdown: 0, t },
                            reward: 0.0,
                            signal: EnvSignal::NONE,
                            done: false,
                        }
                    }
                };
                if s.cell >= corridor_start {
                    vec![moved(s.cell + 1)]
                } else if action == 0 {
                    vec![moved(s.cell.saturating_sub(1))]
                } else if s.cell + 1 == corridor_start && entry_failure > 0.0 {
                    let mut pass = moved(s.cell + 1);
                    pass.prob = 1.0 - entry_failure;
                    vec![
                        pass,
                        Outcome {
                            prob: entry_failure,
                            next: WorldState { cell: s.cell, countdown: 0, t },
                            reward: 0.0,
                            signal: EnvSignal::death(),
                            done: true,
                        },
                    ]
                } else {
                    vec![moved(s.cell + 1)]
                }
            }
            World::Grid {
                width,
                height,
                start,
                goal,
                trap,
                reward_delay,
                ..
            } => {
                let respawn = Outcome {
                    prob: 1.0,
                    next: WorldState { cell: start, countdown: 0, t },
                    reward: GOAL_REWARD,
                    signal: EnvSignal::positive(GOAL_REWARD),
                    done: false,
                };
                if s.countdown > 0 {
                    if s.countdown == 1 {
                        vec![respawn]
                    } else {
                        vec![Outcome {
                            prob: 1.0,
                            next: WorldState { cell: goal, countdown: s.countdown - 1, t },
                            reward: 0.0,
                            signal: EnvSignal::NONE,
                            done: false,
                        }]
                    }
                } else {
                    let (x, y) = (s.cell % width, s.cell / width);
                    let (nx, ny) = match action {
                        0 => (x, y.saturating_sub(1)),
                        1 => (x, (y + 1).min(height - 1)),
                        2 => (x.saturating_sub(1), y),
                        _ => ((x + 1).min(width - 1), y),
                    };
                    let cell = ny * width + nx;
                    if cell == trap {
                        vec![Outcome {
                            prob: 1.0,
                            next: WorldState { cell, countdown: 0, t },
                            reward: 0.0,
                            signal: EnvSignal::death(),
                            done: true,
                        }]
                    } else if cell == goal {
                        if reward_delay == 0 {
                            vec![respawn]
                        } else {
                            vec![Outcome {
                                prob: 1.0,
                                next: WorldState { cell, countdown: reward_delay, t },
                                reward: 0.0,
                                signal: EnvSignal::NONE,
                                done: false,
                            }]
                        }
                    } else {
                        vec![Outcome {
                            prob: 1.0,
                            next: WorldState { cell, countdown: 0, t },
                            reward: 0.0,
                            signal: EnvSignal::NONE,
                            done: false,
                        }]
                    }
                }
            }
        };
        if t >= self.horizon() {
            // Budget exhaustion ends the episode; a signal the step produced
            // anyway takes precedence over the truncation signal.
            for o in &mut out {
                o.done = true;
                if o.signal.is_none() {
                    o.signal = EnvSignal::episode_end();
                }
            }
        }
        out
    }
}
