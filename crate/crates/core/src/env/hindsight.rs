use super::signal::StepResult;

/// Withholds positive rewards until the next negative signal or episode end.
///
/// Signals pass through untouched; only `env_reward` is rewritten.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HindsightFilter {
    pending: f64,
}

impl HindsightFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> f64 {
        self.pending
    }

    pub fn reset(&mut self) {
        self.pending = 0.0;
    }

    pub fn filter(&mut self, mut step: StepResult) -> StepResult {
        let mut reward = 0.0;
        if step.env_reward > 0.0 {
            self.pending += step.env_reward;
        } else {
            reward = step.env_reward;
        }
        if step.signal.is_negative() || step.done {
            reward += self.pending;
            self.pending = 0.0;
        }
        step.env_reward = reward;
        step
    }
}

/// Applies the hindsight rule to a whole stream of steps.
pub fn hindsight_wrap<I>(steps: I) -> impl Iterator<Item = StepResult>
where
    I: IntoIterator<Item = StepResult>,
{
    let mut filter = HindsightFilter::new();
    steps.into_iter().map(move |s| {
        let out = filter.filter(s);
        if out.done {
            filter.reset();
        }
        out
    })
}
