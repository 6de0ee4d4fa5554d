//! Round segmentation, labeled state pools, and sensitive sampling.
//!
//! A round runs from the step after one environmental signal through the step
//! that carries the next one; the state on which a signal arrives belongs to
//! the round it ends. Rounds are labeled by that terminating signal.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSignal, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

/// One step of experience: `observation` is the state the action was taken in.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: usize,
    pub env_reward: f64,
    pub signal: EnvSignal,
    pub done: bool,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub states: Vec<Observation>,
    pub label: Label,
    pub terminating_signal: EnvSignal,
}

impl Round {
    pub fn new(states: Vec<Observation>, terminating_signal: EnvSignal) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Misaligned("a round needs at least one state".into()));
        }
        if terminating_signal.is_none() {
            return Err(Error::Misaligned("a round must end on a signal".into()));
        }
        let label = if terminating_signal.is_positive() {
            Label::Positive
        } else {
            Label::Negative
        };
        Ok(Round {
            states,
            label,
            terminating_signal,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub observation: Observation,
    pub label: Label,
}

/// Incremental segmentation for live rollouts.
#[derive(Debug, Clone, Default)]
pub struct RoundBuilder {
    pending: Vec<Observation>,
}

impl RoundBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> &[Observation] {
        &self.pending
    }

    /// Adds the state a step was taken from; returns the finished round when
    /// the step carried a signal or ended the episode.
    pub fn push(&mut self, observation: Observation, signal: EnvSignal, done: bool) -> Option<Round> {
        self.pending.push(observation);
        if signal.is_none() && !done {
            return None;
        }
        let signal = if signal.is_none() {
            EnvSignal::episode_end()
        } else {
            signal
        };
        let states = std::mem::take(&mut self.pending);
        Some(Round::new(states, signal).expect("pending holds the current state"))
    }

    pub fn clear(&mut self) {
        self.pending.clear();
    }
}

/// Splits a finished trajectory into labeled rounds.
pub fn segment(trajectory: &[Transition]) -> Result<Vec<Round>> {
    match trajectory.last() {
        Some(t) if t.done => {}
        _ => return Err(Error::UnterminatedTrajectory),
    }
    let mut builder = RoundBuilder::new();
    let mut rounds = Vec::new();
    for t in trajectory {
        if let Some(r) = builder.push(t.observation.clone(), t.signal, t.done) {
            rounds.push(r);
        }
    }
    Ok(rounds)
}

/// Bounded FIFO store; each entry remembers the pool generation it joined in.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    capacity: usize,
    items: VecDeque<(u64, LabeledState)>,
}

impl Pool {
    pub fn new(capacity: usize) -> Self {
        Pool {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, state: LabeledState, generation: u64) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((generation, state));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn get(&self, i: usize) -> &LabeledState {
        &self.items[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledState> {
        self.items.iter().map(|(_, s)| s)
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    fn retain_from(&mut self, generation: u64) {
        self.items.retain(|(g, _)| *g >= generation);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub capacity: usize,
    pub sensitive_capacity: usize,
    /// Keep sensitive states for one more outer iteration when clearing.
    pub retain_sensitive: bool,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            capacity: 2_000,
            sensitive_capacity: 500,
            retain_sensitive: false,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.sensitive_capacity == 0 {
            return Err(Error::Config("pool capacities must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolSet {
    pub positive: Pool,
    pub negative: Pool,
    pub sensitive_miss: Pool,
    pub sensitive_false: Pool,
    retain_sensitive: bool,
    generation: u64,
    insertions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolSizes {
    pub positive: usize,
    pub negative: usize,
    pub sensitive_miss: usize,
    pub sensitive_false: usize,
}

impl PoolSet {
    pub fn new(config: &PoolConfig) -> Self {
        PoolSet {
            positive: Pool::new(config.capacity),
            negative: Pool::new(config.capacity),
            sensitive_miss: Pool::new(config.sensitive_capacity),
            sensitive_false: Pool::new(config.sensitive_capacity),
            retain_sensitive: config.retain_sensitive,
            generation: 0,
            insertions: 0,
        }
    }

    pub fn sizes(&self) -> PoolSizes {
        PoolSizes {
            positive: self.positive.len(),
            negative: self.negative.len(),
            sensitive_miss: self.sensitive_miss.len(),
            sensitive_false: self.sensitive_false.len(),
        }
    }

    /// Number of states ever appended to the main pools.
    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    pub fn main_pools_full(&self) -> bool {
        self.positive.is_full() && self.negative.is_full()
    }

    pub fn push_round(&mut self, round: &Round) {
        let pool = match round.label {
            Label::Positive => &mut self.positive,
            Label::Negative => &mut self.negative,
        };
        for s in &round.states {
            pool.push(
                LabeledState {
                    observation: s.clone(),
                    label: round.label,
                },
                self.generation,
            );
        }
        self.insertions += round.states.len() as u64;
    }

    /// Routes hard examples into the sensitive pools. `flags[i][j]` says
    /// whether state j of round i was identified as sufficient.
    pub fn record_sensitive(&mut self, rounds: &[Round], flags: &[Vec<bool>]) -> Result<()> {
        if rounds.len() != flags.len() {
            return Err(Error::Misaligned(format!(
                "{} rounds but {} flag rows",
                rounds.len(),
                flags.len()
            )));
        }
        for (i, (r, f)) in rounds.iter().zip(flags).enumerate() {
            if r.states.len() != f.len() {
                return Err(Error::Misaligned(format!(
                    "round {i} has {} states but {} flags",
                    r.states.len(),
                    f.len()
                )));
            }
        }
        for (r, f) in rounds.iter().zip(flags) {
            self.record_round(r, f);
        }
        Ok(())
    }

    pub(crate) fn record_round(&mut self, round: &Round, flags: &[bool]) {
        match round.label {
            Label::Positive if !flags.iter().any(|&b| b) => {
                for s in &round.states {
                    self.sensitive_miss.push(
                        LabeledState {
                            observation: s.clone(),
                            label: Label::Positive,
                        },
                        self.generation,
                    );
                }
            }
            Label::Negative => {
                for (s, _) in round.states.iter().zip(flags).filter(|(_, &b)| b) {
                    self.sensitive_false.push(
                        LabeledState {
                            observation: s.clone(),
                            label: Label::Negative,
                        },
                        self.generation,
                    );
                }
            }
            Label::Positive => {}
        }
    }

    /// Draws `n` states with replacement: `floor(n * sensitive_fraction)` from
    /// the sensitive pools (or the main pools while those are empty), the
    /// rest from the main pools, then shuffles.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        sensitive_fraction: f64,
        rng: &mut R,
    ) -> Result<Vec<LabeledState>> {
        let main_len = self.positive.len() + self.negative.len();
        if main_len == 0 {
            return Err(Error::EmptyPool("positive and negative pools"));
        }
        if !(0.0..=1.0).contains(&sensitive_fraction) {
            return Err(Error::Config(format!(
                "sensitive fraction must lie in [0, 1], got {sensitive_fraction}"
            )));
        }
        let sens_len = self.sensitive_miss.len() + self.sensitive_false.len();
        let n_sensitive = if sens_len == 0 {
            0
        } else {
            (n as f64 * sensitive_fraction).floor() as usize
        };
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n_sensitive {
            let i = rng.random_range(0..sens_len);
            let s = if i < self.sensitive_miss.len() {
                self.sensitive_miss.get(i)
            } else {
                self.sensitive_false.get(i - self.sensitive_miss.len())
            };
            batch.push(s.clone());
        }
        for _ in n_sensitive..n {
            let i = rng.random_range(0..main_len);
            let s = if i < self.positive.len() {
                self.positive.get(i)
            } else {
                self.negative.get(i - self.positive.len())
            };
            batch.push(s.clone());
        }
        batch.shuffle(rng);
        Ok(batch)
    }

    /// End-of-iteration clear. With retention on, sensitive states survive one
    /// extra iteration.
    pub fn clear(&mut self) {
        self.positive.clear();
        self.negative.clear();
        if self.retain_sensitive {
            self.sensitive_miss.retain_from(self.generation);
            self.sensitive_false.retain_from(self.generation);
        } else {
            self.sensitive_miss.clear();
            self.sensitive_false.clear();
        }
        self.generation += 1;
    }

    /// Writes one JSON record per stored state.
    pub fn export_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (name, pool) in [
            ("positive", &self.positive),
            ("negative", &self.negative),
            ("sensitive_miss", &self.sensitive_miss),
            ("sensitive_false", &self.sensitive_false),
        ] {
            for s in pool.iter() {
                let line = serde_json::json!({
                    "pool": name,
                    "label": s.label,
                    "observation": s.observation,
                });
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NegativeCause;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(i: usize) -> Observation {
        Observation(vec![i as f64])
    }

    /// Steps 1..=len with the given (step, signal) events; the last step is done.
    fn trajectory(len: usize, events: &[(usize, EnvSignal)]) -> Vec<Transition> {
        (1..=len)
            .map(|t| {
                let signal = events
                    .iter()
                    .find(|e| e.0 == t)
                    .map(|e| e.1)
                    .unwrap_or(if t == len {
                        EnvSignal::episode_end()
                    } else {
                        EnvSignal::NONE
                    });
                Transition {
                    observation: obs(t),
                    action: 0,
                    env_reward: 0.0,
                    signal,
                    done: t == len,
                    step_index: t,
                }
            })
            .collect()
    }

    fn ids(r: &Round) -> Vec<usize> {
        r.states.iter().map(|o| o.0[0] as usize).collect()
    }

    fn round(label: Label, states: std::ops::Range<usize>) -> Round {
        let signal = match label {
            Label::Positive => EnvSignal::positive(1.0),
            Label::Negative => EnvSignal::death(),
        };
        Round::new(states.map(obs).collect(), signal).unwrap()
    }

    #[test]
    fn positive_then_episode_end_gives_two_rounds() {
        let rounds = segment(&trajectory(10, &[(4, EnvSignal::positive(1.0))])).unwrap();
        assert_eq!(rounds.len(), 2);
        assert_eq!(ids(&rounds[0]), vec![1, 2, 3, 4]);
        assert_eq!(rounds[0].label, Label::Positive);
        assert_eq!(ids(&rounds[1]), (5..=10).collect::<Vec<_>>());
        assert_eq!(rounds[1].label, Label::Negative);
    }

    #[test]
    fn single_terminal_signal_gives_one_negative_round() {
        let rounds = segment(&trajectory(6, &[])).unwrap();
        assert_eq!(rounds.len(), 1);
        assert_eq!(rounds[0].len(), 6);
        assert_eq!(rounds[0].label, Label::Negative);
    }

    #[test]
    fn consecutive_signals_isolate_one_state() {
        let events = [
            (3, EnvSignal::positive(1.0)),
            (4, EnvSignal::negative(NegativeCause::Penalty, 1.0)),
        ];
        let rounds = segment(&trajectory(8, &events)).unwrap();
        assert_eq!(ids(&rounds[1]), vec![4]);
        assert_eq!(rounds[1].label, Label::Negative);
    }

    #[test]
    fn unterminated_trajectory_is_rejected() {
        let mut t = trajectory(5, &[]);
        t.last_mut().unwrap().done = false;
        assert!(matches!(segment(&t), Err(Error::UnterminatedTrajectory)));
        assert!(matches!(segment(&[]), Err(Error::UnterminatedTrajectory)));
    }

    #[test]
    fn push_positive_round_into_empty_pools() {
        let mut pools = PoolSet::new(&PoolConfig::default());
        pools.push_round(&round(Label::Positive, 0..5));
        assert_eq!(
            pools.sizes(),
            PoolSizes {
                positive: 5,
                ..Default::default()
            }
        );
    }

    #[test]
    fn full_pool_evicts_oldest() {
        let config = PoolConfig {
            capacity: 10,
            ..Default::default()
        };
        let mut pools = PoolSet::new(&config);
        pools.push_round(&round(Label::Positive, 0..10));
        pools.push_round(&round(Label::Positive, 10..15));
        assert_eq!(pools.positive.len(), 10);
        let kept: Vec<usize> = pools.positive.iter().map(|s| s.observation.0[0] as usize).collect();
        assert_eq!(kept, (5..15).collect::<Vec<_>>());
    }

    #[test]
    fn sensitive_rules() {
        let mut pools = PoolSet::new(&PoolConfig::default());
        let rounds = vec![
            round(Label::Positive, 0..3),
            round(Label::Negative, 3..8),
            round(Label::Positive, 8..10),
        ];
        let flags = vec![
            vec![false; 3],
            vec![false, true, false, true, false],
            vec![false, true],
        ];
        pools.record_sensitive(&rounds, &flags).unwrap();
        let miss: Vec<usize> = pools.sensitive_miss.iter().map(|s| s.observation.0[0] as usize).collect();
        let fals: Vec<usize> = pools.sensitive_false.iter().map(|s| s.observation.0[0] as usize).collect();
        assert_eq!(miss, vec![0, 1, 2]);
        assert_eq!(fals, vec![4, 6]);
        assert!(pools.sensitive_miss.iter().all(|s| s.label == Label::Positive));
        assert!(pools.sensitive_false.iter().all(|s| s.label == Label::Negative));
    }

    #[test]
    fn misaligned_flags_are_rejected() {
        let mut pools = PoolSet::new(&PoolConfig::default());
        let rounds = vec![round(Label::Positive, 0..3)];
        assert!(pools.record_sensitive(&rounds, &[vec![true; 2]]).is_err());
        assert!(pools.record_sensitive(&rounds, &[]).is_err());
    }

    fn populated() -> PoolSet {
        let mut pools = PoolSet::new(&PoolConfig::default());
        pools.push_round(&round(Label::Positive, 0..50));
        pools.push_round(&round(Label::Negative, 50..100));
        pools.record_sensitive(&[round(Label::Positive, 100..120)], &[vec![false; 20]]).unwrap();
        pools.record_sensitive(&[round(Label::Negative, 120..140)], &[vec![true; 20]]).unwrap();
        pools
    }

    fn is_sensitive(s: &LabeledState) -> bool {
        s.observation.0[0] >= 100.0
    }

    #[test]
    fn batch_split_follows_fraction() {
        let pools = populated();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = pools.sample_batch(100, 0.75, &mut rng).unwrap();
        assert_eq!(batch.len(), 100);
        assert_eq!(batch.iter().filter(|s| is_sensitive(s)).count(), 75);
    }

    #[test]
    fn empty_sensitive_pools_fall_back_to_main() {
        let mut pools = PoolSet::new(&PoolConfig::default());
        pools.push_round(&round(Label::Positive, 0..5));
        pools.push_round(&round(Label::Negative, 5..10));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = pools.sample_batch(100, 0.75, &mut rng).unwrap();
        assert_eq!(batch.len(), 100);
        assert!(batch.iter().all(|s| s.observation.0[0] < 10.0));
    }

    #[test]
    fn zero_fraction_draws_only_main() {
        let pools = populated();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = pools.sample_batch(400, 0.0, &mut rng).unwrap();
        assert!(batch.iter().all(|s| !is_sensitive(s)));
        let pos = batch.iter().filter(|s| s.label == Label::Positive).count();
        // 50/50 main pools
        assert!((150..250).contains(&pos), "{pos}");
    }

    #[test]
    fn sampling_requires_main_pools() {
        let pools = PoolSet::new(&PoolConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(pools.sample_batch(4, 0.5, &mut rng), Err(Error::EmptyPool(_))));
    }

    #[test]
    fn strict_clear_empties_everything() {
        let mut pools = populated();
        pools.clear();
        assert_eq!(pools.sizes(), PoolSizes::default());
    }

    #[test]
    fn retained_sensitive_states_last_one_extra_iteration() {
        let config = PoolConfig {
            retain_sensitive: true,
            ..Default::default()
        };
        let mut pools = PoolSet::new(&config);
        pools.record_sensitive(&[round(Label::Positive, 0..4)], &[vec![false; 4]]).unwrap();
        pools.clear();
        assert_eq!(pools.sensitive_miss.len(), 4);
        pools.record_sensitive(&[round(Label::Positive, 4..6)], &[vec![false; 2]]).unwrap();
        pools.clear();
        let left: Vec<usize> = pools.sensitive_miss.iter().map(|s| s.observation.0[0] as usize).collect();
        assert_eq!(left, vec![4, 5]);
        pools.clear();
        assert!(pools.sensitive_miss.is_empty());
    }

    #[test]
    fn export_writes_one_line_per_state() {
        let pools = populated();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pools.jsonl");
        pools.export_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 140);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["pool"], "positive");
    }

    fn arb_events() -> impl Strategy<Value = (usize, Vec<u8>)> {
        (1usize..60).prop_flat_map(|len| (Just(len), proptest::collection::vec(0u8..6, len)))
    }

    proptest! {
        #[test]
        fn rounds_partition_the_trajectory((len, kinds) in arb_events()) {
            let events: Vec<(usize, EnvSignal)> = kinds
                .iter()
                .enumerate()
                .filter_map(|(i, k)| match k {
                    0 => Some((i + 1, EnvSignal::positive(1.0))),
                    1 => Some((i + 1, EnvSignal::negative(NegativeCause::Penalty, 0.5))),
                    _ => None,
                })
                .collect();
            let traj = trajectory(len, &events);
            let rounds = segment(&traj).unwrap();
            let flat: Vec<usize> = rounds.iter().flat_map(ids).collect();
            prop_assert_eq!(flat, (1..=len).collect::<Vec<_>>());
            for r in &rounds {
                prop_assert!(!r.is_empty());
                prop_assert_eq!(r.label == Label::Positive, r.terminating_signal.is_positive());
            }
        }

        #[test]
        fn pools_stay_bounded_and_label_sound(
            ops in proptest::collection::vec((any::<bool>(), 1usize..30), 1..40),
            cap in 1usize..50,
        ) {
            let config = PoolConfig { capacity: cap, sensitive_capacity: cap, retain_sensitive: false };
            let mut pools = PoolSet::new(&config);
            let (mut pos, mut neg) = (0usize, 0usize);
            let mut next = 0;
            for (positive, n) in ops {
                let label = if positive { Label::Positive } else { Label::Negative };
                pools.push_round(&round(label, next..next + n));
                next += n;
                if positive { pos += n } else { neg += n }
                prop_assert!(pools.positive.len() <= cap && pools.negative.len() <= cap);
            }
            prop_assert_eq!(pools.positive.len(), pos.min(cap));
            prop_assert_eq!(pools.negative.len(), neg.min(cap));
            prop_assert!(pools.positive.iter().all(|s| s.label == Label::Positive));
            prop_assert!(pools.negative.iter().all(|s| s.label == Label::Negative));
        }
    }
}
