use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    DelayedChain,
    TrapGrid,
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvName::DelayedChain => "delayed-chain",
            EnvName::TrapGrid => "trap-grid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    /// Number of cells; the last one is the goal.
    pub length: usize,
    /// Number of trailing cells (goal included) that carry the agent to the goal
    /// regardless of its actions.
    pub corridor: usize,
    /// Probability that the step into the corridor kills the agent.
    pub entry_failure: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            length: 20,
            corridor: 5,
            entry_failure: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub width: usize,
    pub height: usize,
    /// `[column, row]`
    pub start: [usize; 2],
    pub goal: [usize; 2],
    pub trap: [usize; 2],
    /// Steps the agent is held on the goal cell before the reward arrives.
    pub reward_delay: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            width: 5,
            height: 5,
            start: [0, 0],
            goal: [4, 4],
            trap: [2, 2],
            reward_delay: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    pub max_episode_steps: usize,
    pub hindsight: bool,
    pub seed: u64,
    pub chain: ChainParams,
    pub grid: GridParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: EnvName::DelayedChain,
            max_episode_steps: 200,
            hindsight: false,
            seed: 0,
            chain: ChainParams::default(),
            grid: GridParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn chain(length: usize, corridor: usize) -> Self {
        EnvConfig {
            name: EnvName::DelayedChain,
            chain: ChainParams {
                length,
                corridor,
                ..ChainParams::default()
            },
            ..EnvConfig::default()
        }
    }

    pub fn grid(width: usize, height: usize) -> Self {
        EnvConfig {
            name: EnvName::TrapGrid,
            max_episode_steps: 100,
            grid: GridParams {
                width,
                height,
                goal: [width.saturating_sub(1), height.saturating_sub(1)],
                trap: [width / 2, height / 2],
                ..GridParams::default()
            },
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be at least 1".into()));
        }
        match self.name {
            EnvName::DelayedChain => {
                let c = &self.chain;
                if c.length < 2 {
                    return Err(Error::Config("chain length must be at least 2".into()));
                }
                if c.corridor == 0 || c.corridor >= c.length {
                    return Err(Error::Config(format!(
                        "corridor must be in 1..{}, got {}",
                        c.length, c.corridor
                    )));
                }
                if !(0.0..1.0).contains(&c.entry_failure) {
                    return Err(Error::Config("entry_failure must be in [0, 1)".into()));
                }
            }
            EnvName::TrapGrid => {
                let g = &self.grid;
                if g.width == 0 || g.height == 0 || g.width * g.height < 3 {
                    return Err(Error::Config("grid needs at least three cells".into()));
                }
                for (what, [x, y]) in [("start", g.start), ("goal", g.goal), ("trap", g.trap)] {
                    if x >= g.width || y >= g.height {
                        return Err(Error::Config(format!("{what} {x},{y} lies outside the grid")));
                    }
                }
                if g.start == g.goal || g.start == g.trap || g.goal == g.trap {
                    return Err(Error::Config("start, goal and trap must be distinct".into()));
                }
            }
        }
        Ok(())
    }
}
