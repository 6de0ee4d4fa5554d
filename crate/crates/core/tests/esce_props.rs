use esce::env::{EnvConfig, Env, EnvSignal, Observation};
use esce::esce::{
    calibrate, new_optimizer, train_phase2, CalibrationState, EsceConfig, EsceMetrics, EsceModel,
};
use esce::nn::Method;
use esce::rounds::{segment, Label, LabeledState, Pool, Round, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_hot(i: usize, n: usize) -> Observation {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    Observation(v)
}

/// A model whose raw weights are scaled so predictions spread over (0, 1).
fn spread_model(dim: usize, seed: u64, config: &EsceConfig) -> EsceModel {
    let mut model = EsceModel::new(dim, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    for s in model.net.param_slices_mut() {
        s.iter_mut().for_each(|v| *v *= 5.0);
    }
    model
}

fn negative_pool(states: &[usize], dim: usize) -> Pool {
    let mut pool = Pool::new(states.len().max(1));
    for &s in states {
        pool.push(
            LabeledState {
                observation: one_hot(s, dim),
                label: Label::Negative,
            },
            0,
        );
    }
    pool
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phase2_meets_sigma_unless_budget_runs_out(
        states in proptest::collection::vec(0usize..8, 1..60),
        sigma in 0.81f64..=1.0,
        seed in any::<u64>(),
    ) {
        let config = EsceConfig { sigma, phase2_max_iters: 200, learning_rate: 1e-2, ..EsceConfig::default() };
        let mut model = spread_model(8, seed, &config);
        let mut opt = new_optimizer(&model, &config).unwrap();
        let pool = negative_pool(&states, 8);
        let out = train_phase2(&mut model, &mut opt, &pool, sigma, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let below = pool.iter().filter(|s| model.predict(&s.observation).unwrap() < model.tau).count();
        let recall = below as f64 / pool.len() as f64;
        prop_assert_eq!(recall, out.recall_neg);
        if out.reached {
            prop_assert!(recall >= sigma);
        } else {
            prop_assert_eq!(out.iterations, config.phase2_max_iters);
        }
    }

    #[test]
    fn one_phase2_step_lowers_batch_predictions(
        states in proptest::collection::vec(0usize..8, 1..32),
        seed in any::<u64>(),
        adam in any::<bool>(),
    ) {
        let config = EsceConfig {
            optimizer: if adam { Method::Adam } else { Method::Sgd },
            ..EsceConfig::default()
        };
        let mut model = spread_model(8, seed, &config);
        let mut opt = new_optimizer(&model, &config).unwrap();
        let batch: Vec<LabeledState> = states
            .iter()
            .map(|&s| LabeledState { observation: one_hot(s, 8), label: Label::Negative })
            .collect();
        let mean = |m: &EsceModel| batch.iter().map(|s| m.predict(&s.observation).unwrap()).sum::<f64>() / batch.len() as f64;
        let before = mean(&model);
        model.train_batch(&batch, &mut opt).unwrap();
        prop_assert!(mean(&model) <= before);
    }

    #[test]
    fn metric_identities_hold(rounds in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..50)) {
        let built: Vec<Round> = rounds
            .iter()
            .map(|&(positive, _)| {
                let signal = if positive { EnvSignal::positive(1.0) } else { EnvSignal::death() };
                Round::new(vec![one_hot(0, 1)], signal).unwrap()
            })
            .collect();
        let flags: Vec<bool> = rounds.iter().map(|r| r.1).collect();
        let m = EsceMetrics::from_flags(&built, &flags, 0.0);
        if m.n_ident > 0 {
            prop_assert!((m.precision_pos * m.n_ident as f64 - m.n_suff as f64).abs() < 1e-9);
        } else {
            prop_assert_eq!(m.precision_pos, 0.0);
        }
        if m.n_pos > 0 {
            prop_assert!((m.recall_pos * m.n_pos as f64 - m.n_suff as f64).abs() < 1e-9);
        } else {
            prop_assert_eq!(m.recall_pos, 0.0);
        }
        prop_assert!(m.n_suff <= m.n_ident.min(m.n_pos));
        prop_assert!((0.0..=1.0).contains(&m.precision_pos) && (0.0..=1.0).contains(&m.recall_pos));
    }

    #[test]
    fn calibrated_rewards_never_outnumber_rounds(seed in any::<u64>(), grid in any::<bool>(), tau in 0.05f64..0.95) {
        let env_config = if grid { EnvConfig::grid(4, 4) } else { EnvConfig::chain(8, 3) };
        let env_config = EnvConfig { max_episode_steps: 60, seed, ..env_config };
        let mut env = Env::new(&env_config).unwrap();
        let config = EsceConfig { tau, ..EsceConfig::default() };
        let model = spread_model(env.obs_dim(), seed, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cal = CalibrationState::new(1.0);
        let mut obs = env.reset();
        let mut trajectory = Vec::new();
        let mut paid = Vec::new();
        for step_index in 0.. {
            let action = rng.random_range(0..env.num_actions());
            let step = env.step(action).unwrap();
            paid.push(calibrate(&model, &obs, &mut cal, &step.signal).unwrap() != 0.0);
            trajectory.push(Transition {
                observation: obs,
                action,
                env_reward: step.env_reward,
                signal: step.signal,
                done: step.done,
                step_index,
            });
            obs = step.observation;
            if step.done {
                break;
            }
        }
        let rounds = segment(&trajectory).unwrap();
        prop_assert!(paid.iter().filter(|&&p| p).count() <= rounds.len());
        let mut at = 0;
        for r in &rounds {
            let in_round = paid[at..at + r.len()].iter().filter(|&&p| p).count();
            prop_assert!(in_round <= 1);
            at += r.len();
        }
    }
}
