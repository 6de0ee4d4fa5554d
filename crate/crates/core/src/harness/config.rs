use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, RewardMix};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::esce::EsceConfig;
use crate::rounds::PoolConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    Semi,
    Full,
    HindsightFull,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Semi, Mode::Full, Mode::HindsightFull];

    pub fn mix(self) -> RewardMix {
        match self {
            Mode::Baseline => RewardMix::BASELINE,
            Mode::Semi => RewardMix::SEMI,
            Mode::Full | Mode::HindsightFull => RewardMix::FULL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Semi => "semi",
            Mode::Full => "full",
            Mode::HindsightFull => "hindsight-full",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected baseline, semi, full or hindsight-full)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub outer_iterations: usize,
    /// Cap on environment steps per collection phase, in case the pools
    /// never fill.
    pub max_steps_per_iteration: u64,
    /// Completed episodes in the sliding return window.
    pub window: usize,
    /// Relative change of the window mean below which an iteration counts
    /// as flat.
    pub convergence_tol: f64,
    /// Consecutive flat iterations that count as converged.
    pub convergence_patience: usize,
    /// Stop a seed as soon as it converges; otherwise always use the whole budget.
    pub stop_on_convergence: bool,
    /// Train the extractor even when its rewards carry no weight.
    pub train_esce_in_baseline: bool,
    /// Start from the policy stored in this checkpoint.
    pub policy_checkpoint: Option<PathBuf>,
    /// Keep the policy fixed; only the extractor learns.
    pub freeze_policy: bool,
    pub output_dir: PathBuf,
    pub charts: bool,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub esce: EsceConfig,
    pub pools: PoolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Full,
            seeds: vec![0],
            outer_iterations: 50,
            max_steps_per_iteration: 20_000,
            window: 20,
            convergence_tol: 0.01,
            convergence_patience: 3,
            stop_on_convergence: true,
            train_esce_in_baseline: true,
            policy_checkpoint: None,
            freeze_policy: false,
            output_dir: PathBuf::from("runs"),
            charts: true,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            esce: EsceConfig::default(),
            pools: PoolConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mix(&self) -> RewardMix {
        self.mode.mix()
    }

    /// The environment as the agent sees it: hindsight-full forces the
    /// hindsight wrapper on.
    pub fn effective_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if self.mode == Mode::HindsightFull {
            env.hindsight = true;
        }
        env
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.window == 0 || self.convergence_patience == 0 || self.max_steps_per_iteration == 0 {
            return Err(Error::Config(
                "window, convergence_patience and max_steps_per_iteration must be positive".into(),
            ));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::Config("convergence_tol must be finite and non-negative".into()));
        }
        self.env.validate()?;
        self.agent.validate()?;
        self.esce.validate()?;
        self.pools.validate()?;
        self.mix().validate()
    }
}
