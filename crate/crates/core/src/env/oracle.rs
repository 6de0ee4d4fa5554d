//! Exact dynamic programming over the enumerable built-in worlds.

use std::collections::HashMap;

use super::config::EnvConfig;
use super::signal::{Observation, SignalKind};
use super::world::{World, WorldState};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Larger state spaces are refused rather than enumerated.
pub const MAX_ENUMERABLE_STATES: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub state: WorldState,
    pub observation: Observation,
    /// Probability that the next environmental signal is positive.
    pub success_prob: f64,
    /// Reachable from the initial state with positive probability under the policy.
    pub reachable: bool,
    pub sufficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub epsilon: f64,
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    pub fn sufficient(&self) -> impl Iterator<Item = &OracleEntry> {
        self.entries.iter().filter(|e| e.sufficient)
    }

    pub fn sufficient_states(&self) -> Vec<WorldState> {
        self.sufficient().map(|e| e.state).collect()
    }

    pub fn reachable(&self) -> impl Iterator<Item = &OracleEntry> {
        self.entries.iter().filter(|e| e.reachable)
    }
}

fn enumerable(config: &EnvConfig) -> Result<World> {
    let world = World::from_config(config)?;
    if world.state_count() > MAX_ENUMERABLE_STATES {
        return Err(Error::NotEnumerable(format!(
            "{} with {} states",
            config.name,
            world.state_count()
        )));
    }
    Ok(world)
}

fn checked_probs(policy: &dyn Fn(&Observation) -> Vec<f64>, obs: &Observation, n: usize) -> Result<Vec<f64>> {
    let p = policy(obs);
    if p.len() != n {
        return Err(Error::Shape(format!(
            "policy returned {} probabilities for {n} actions",
            p.len()
        )));
    }
    Ok(p)
}

/// States from which, under `policy`, the next environmental signal is
/// positive with probability at least `1 - epsilon`.
///
/// Success probabilities are computed backwards in time: a positive signal
/// scores 1, a negative one scores 0, and a silent step inherits the value of
/// its successor.
pub fn sufficiency_oracle(
    config: &EnvConfig,
    policy: &dyn Fn(&Observation) -> Vec<f64>,
    epsilon: f64,
) -> Result<OracleReport> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    let world = enumerable(config)?;
    let horizon = world.horizon();
    let na = world.num_actions();

    let mut layers: Vec<Vec<(WorldState, Observation, Vec<f64>)>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut layer = Vec::new();
        for s in world.states_at(t) {
            let obs = world.observe(&s);
            let probs = checked_probs(policy, &obs, na)?;
            layer.push((s, obs, probs));
        }
        layers.push(layer);
    }

    let mut value: HashMap<WorldState, f64> = HashMap::new();
    let mut success = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let mut vals = Vec::with_capacity(layers[t].len());
        for (s, _, probs) in &layers[t] {
            let mut v = 0.0;
            for (a, &pa) in probs.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for o in world.outcomes(s, a) {
                    let cont = match o.signal.kind {
                        SignalKind::Positive => 1.0,
                        SignalKind::Negative => 0.0,
                        SignalKind::None if o.done => 0.0,
                        SignalKind::None => value.get(&o.next).copied().unwrap_or(0.0),
                    };
                    v += pa * o.prob * cont;
                }
            }
            vals.push(v);
        }
        for ((s, _, _), &v) in layers[t].iter().zip(&vals) {
            value.insert(*s, v);
        }
        success[t] = vals;
    }

    // forward reachability
    let mut reach: HashMap<WorldState, bool> = HashMap::new();
    reach.insert(world.initial(), true);
    for layer in &layers {
        for (s, _, probs) in layer {
            if !reach.get(s).copied().unwrap_or(false) {
                continue;
            }
            for (a, &pa) in probs.iter().enumerate() {
                if pa <= 0.0 {
                    continue;
                }
                for o in world.outcomes(s, a) {
                    if o.prob > 0.0 && !o.done {
                        reach.insert(o.next, true);
                    }
                }
            }
        }
    }

    let threshold = 1.0 - epsilon;
    let mut entries = Vec::with_capacity(value.len());
    for (layer, vals) in layers.into_iter().zip(success) {
        for ((state, observation, _), success_prob) in layer.into_iter().zip(vals) {
            entries.push(OracleEntry {
                reachable: reach.get(&state).copied().unwrap_or(false),
                // tolerate round-off when epsilon is zero
                sufficient: success_prob >= threshold - 1e-12,
                state,
                observation,
                success_prob,
            });
        }
    }
    Ok(OracleReport { epsilon, entries })
}

/// Expected undiscounted episode return under `policy`.
pub fn expected_return(config: &EnvConfig, policy: &dyn Fn(&Observation) -> Vec<f64>) -> Result<f64> {
    let world = enumerable(config)?;
    let na = world.num_actions();
    backward_values(&world, |s, world, value| {
        let probs = checked_probs(policy, &world.observe(s), na)?;
        let mut v = 0.0;
        for (a, &pa) in probs.iter().enumerate() {
            v += pa * action_value(world, s, a, value);
        }
        Ok(v)
    })
}

/// Best achievable expected undiscounted episode return.
pub fn optimal_return(config: &EnvConfig) -> Result<f64> {
    let world = enumerable(config)?;
    backward_values(&world, |s, world, value| {
        Ok((0..world.num_actions())
            .map(|a| action_value(world, s, a, value))
            .fold(f64::NEG_INFINITY, f64::max))
    })
}

fn action_value(world: &World, s: &WorldState, a: usize, value: &HashMap<WorldState, f64>) -> f64 {
    world
        .outcomes(s, a)
        .iter()
        .map(|o| {
            let future = if o.done {
                0.0
            } else {
                value.get(&o.next).copied().unwrap_or(0.0)
            };
            o.prob * (o.reward + future)
        })
        .sum()
}

fn backward_values<F>(world: &World, mut backup: F) -> Result<f64>
where
    F: FnMut(&WorldState, &World, &HashMap<WorldState, f64>) -> Result<f64>,
{
    let mut value: HashMap<WorldState, f64> = HashMap::new();
    for t in (0..world.horizon()).rev() {
        let mut next = Vec::new();
        for s in world.states_at(t) {
            next.push((s, backup(&s, world, &value)?));
        }
        value.extend(next);
    }
    Ok(value[&world.initial()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::config::EnvConfig;

    fn uniform(n: usize) -> impl Fn(&Observation) -> Vec<f64> {
        move |_| vec![1.0 / n as f64; n]
    }

    #[test]
    fn corridor_cells_sufficient_under_any_policy() {
        let config = EnvConfig::chain(20, 5);
        let world = World::from_config(&config).unwrap();
        let always_left = |_: &Observation| vec![1.0, 0.0];
        for policy in [&uniform(2) as &dyn Fn(&Observation) -> Vec<f64>, &always_left] {
            let report = sufficiency_oracle(&config, policy, DEFAULT_EPSILON).unwrap();
            for e in &report.entries {
                let needed = world.num_cells() - 1 - e.state.cell;
                let in_corridor = e.state.cell >= 15;
                let in_time = e.state.t + needed <= world.horizon();
                if in_corridor && in_time {
                    assert!(e.sufficient, "{:?}", e.state);
                }
                if !in_corridor {
                    assert!(!e.sufficient, "{:?}", e.state);
                }
            }
        }
    }

    #[test]
    fn random_start_on_trap_grid_is_not_sufficient() {
        let config = EnvConfig::grid(5, 5);
        let report = sufficiency_oracle(&config, &uniform(4), DEFAULT_EPSILON).unwrap();
        let start = report
            .entries
            .iter()
            .find(|e| e.state == World::from_config(&config).unwrap().initial())
            .unwrap();
        assert!(start.success_prob > 0.0 && start.success_prob < 1.0 - DEFAULT_EPSILON);
        assert!(!start.sufficient);
    }

    #[test]
    fn deterministic_goal_policy_makes_its_path_sufficient() {
        let mut config = EnvConfig::grid(5, 5);
        config.grid.trap = [0, 4];
        config.grid.reward_delay = 0;
        // along the top row to the right edge, then down
        let world = World::from_config(&config).unwrap();
        let policy = |obs: &Observation| {
            let cell = obs.0[..25].iter().position(|&v| v == 1.0).unwrap();
            if cell % 5 < 4 {
                vec![0.0, 0.0, 0.0, 1.0]
            } else {
                vec![0.0, 1.0, 0.0, 0.0]
            }
        };
        let report = sufficiency_oracle(&config, &policy, 0.0).unwrap();
        let path = [0usize, 1, 2, 3, 4, 9, 14, 19];
        for (t, &cell) in path.iter().enumerate() {
            let e = report
                .entries
                .iter()
                .find(|e| e.state == WorldState { cell, countdown: 0, t })
                .unwrap();
            assert!(e.sufficient && e.reachable, "{:?}", e.state);
        }
        assert_eq!(world.initial().cell, 0);
    }

    #[test]
    fn optimal_return_bounds_any_policy() {
        for config in [EnvConfig::chain(10, 3), EnvConfig::grid(4, 4)] {
            let best = optimal_return(&config).unwrap();
            let rand = expected_return(&config, &uniform(World::from_config(&config).unwrap().num_actions())).unwrap();
            assert!(best > rand);
        }
    }

    #[test]
    fn chain_optimal_return_matches_hand_count() {
        // length 5, corridor 2, no entry failure: a lap takes 4 steps, 12 steps -> 3 goals
        let mut config = EnvConfig::chain(5, 2);
        config.chain.entry_failure = 0.0;
        config.max_episode_steps = 12;
        assert!((optimal_return(&config).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_policy_width_is_rejected() {
        let config = EnvConfig::chain(6, 2);
        assert!(sufficiency_oracle(&config, &uniform(3), 0.1).is_err());
    }
}
