use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mglab_core::game::{random_game, MarkovGame, MarkovPolicy, ReturnMode};
use mglab_core::harness::{
    lift_min_policy, run_experiment, ExperimentConfig, GameSource, InitialStates, LearnerSpec, Metric, OpponentSpec,
};
use mglab_core::matrix::ORACLE_TOL;
use mglab_core::oracle::{best_response_value, evaluate_pair, min_best_response, minimax_values};

fn game(seed: u64, h: usize, s: usize, a: usize, b: usize) -> MarkovGame {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    random_game(h, s, a, b, &mut r, ReturnMode::Bernoulli).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nash_policies_sandwich_the_value(seed in any::<u64>(), h in 1usize..4, s in 1usize..4, a in 1usize..4, b in 1usize..4) {
        let g = game(seed, h, s, a, b);
        let star = minimax_values(&g, ORACLE_TOL).unwrap();
        let (up, _) = best_response_value(&g, &star.min_policy).unwrap();
        let (down, _) = min_best_response(&g, &star.max_policy).unwrap();
        let pair = evaluate_pair(&g, &star.max_policy, &star.min_policy).unwrap();
        let slack = 10.0 * h as f64 * ORACLE_TOL + 1e-9;
        for layer in 0..h {
            for st in 0..g.num_states(layer) {
                let v = star.values.get(layer, st);
                prop_assert!(v >= -1e-12 && v <= (h - layer) as f64 + 1e-12);
                prop_assert!((up.get(layer, st) - v).abs() <= slack);
                prop_assert!((down.get(layer, st) - v).abs() <= slack);
                prop_assert!((pair.get(layer, st) - v).abs() <= slack);
            }
        }
    }

    #[test]
    fn role_swap_complements_the_value(seed in any::<u64>(), h in 1usize..4, s in 1usize..3) {
        let g = game(seed, h, s, 2, 3);
        let v = minimax_values(&g, ORACLE_TOL).unwrap().values;
        let w = minimax_values(&g.swap_roles(), ORACLE_TOL).unwrap().values;
        for layer in 0..h {
            for st in 0..g.num_states(layer) {
                prop_assert!((v.get(layer, st) + w.get(layer, st) - (h - layer) as f64).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn duplication_keeps_values(seed in any::<u64>(), factor in 1usize..5) {
        let g = game(seed, 2, 2, 2, 2);
        let d = g.duplicate_min_actions(factor).unwrap();
        let nu = MarkovPolicy::uniform_min(&g);
        let mu = MarkovPolicy::uniform_max(&g);
        let base = evaluate_pair(&g, &mu, &nu).unwrap();
        let lifted = evaluate_pair(&d, &mu, &lift_min_policy(&nu, factor)).unwrap();
        let v = minimax_values(&g, ORACLE_TOL).unwrap().values;
        let vd = minimax_values(&d, ORACLE_TOL).unwrap().values;
        for st in 0..g.num_states(0) {
            prop_assert!((base.get(0, st) - lifted.get(0, st)).abs() <= 1e-12);
            prop_assert!((v.get(0, st) - vd.get(0, st)).abs() <= 1e-7);
        }
    }

    #[test]
    fn game_json_round_trips(seed in any::<u64>(), h in 1usize..4, s in 1usize..4) {
        let g = game(seed, h, s, 2, 3);
        prop_assert_eq!(MarkovGame::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn ledger_rows_are_consistent(seed in 0u64..1000, opponent in 0usize..3) {
        let mut cfg = ExperimentConfig::new(
            GameSource::Random { horizon: 2, states: 2, max_actions: 2, min_actions: 3, seed: 9, bernoulli: true },
            LearnerSpec::vol(),
            60,
        );
        cfg.seed = seed;
        cfg.initial_states = InitialStates::Uniform;
        cfg.metrics = vec![Metric::WeakRegret, Metric::UcbGap];
        cfg.opponent = match opponent {
            0 => OpponentSpec::Nash,
            1 => OpponentSpec::Uniform,
            _ => OpponentSpec::AdaptiveBestResponse { period: Some(7) },
        };
        let l = run_experiment(&cfg).unwrap();
        let mut cum = 0.0;
        for (i, r) in l.rows.iter().enumerate() {
            prop_assert_eq!(r.k, i + 1);
            prop_assert_eq!(r.weak_inc, r.v_star - r.v_pair);
            cum += r.weak_inc;
            prop_assert_eq!(r.weak_cum, cum);
            prop_assert!(r.v_pair >= -1e-12 && r.v_pair <= 2.0 + 1e-12);
            prop_assert!(r.ucb_gap.is_some());
        }
        // Against a fixed Nash opponent nothing can beat the value.
        if opponent == 0 {
            prop_assert!(l.rows.iter().all(|r| r.weak_inc >= -1e-7));
        }
    }
}
