use serde::{Deserialize, Serialize};

/// Fixed-length observation with every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn in_unit_box(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl AsRef<[f64]> for Observation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    None,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCause {
    Penalty,
    Death,
    EpisodeEnd,
}

/// Environmental event attached to a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSignal {
    pub kind: SignalKind,
    pub cause: Option<NegativeCause>,
    pub magnitude: f64,
}

impl EnvSignal {
    pub const NONE: EnvSignal = EnvSignal {
        kind: SignalKind::None,
        cause: None,
        magnitude: 0.0,
    };

    pub fn positive(magnitude: f64) -> Self {
        debug_assert!(magnitude > 0.0);
        EnvSignal {
            kind: SignalKind::Positive,
            cause: None,
            magnitude,
        }
    }

    pub fn negative(cause: NegativeCause, magnitude: f64) -> Self {
        EnvSignal {
            kind: SignalKind::Negative,
            cause: Some(cause),
            magnitude,
        }
    }

    pub fn death() -> Self {
        Self::negative(NegativeCause::Death, 0.0)
    }

    pub fn episode_end() -> Self {
        Self::negative(NegativeCause::EpisodeEnd, 0.0)
    }

    pub fn is_none(&self) -> bool {
        self.kind == SignalKind::None
    }

    pub fn is_positive(&self) -> bool {
        self.kind == SignalKind::Positive
    }

    pub fn is_negative(&self) -> bool {
        self.kind == SignalKind::Negative
    }

    /// Checks the taxonomy's field constraints.
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            SignalKind::None => self.magnitude == 0.0 && self.cause.is_none(),
            SignalKind::Positive => self.magnitude > 0.0 && self.cause.is_none(),
            SignalKind::Negative => self.cause.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub env_reward: f64,
    pub signal: EnvSignal,
    pub done: bool,
}
