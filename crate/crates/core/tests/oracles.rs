mod common;

use common::{brute_shapley, brute_value_iteration, chain2, monte_carlo_return, opponent_enumeration};
use marl_core::fqi::MixturePolicy;
use marl_core::model::{random_garnet, random_zero_sum_game, GarnetParams, MmdpSpec, TabularModel, ZeroSumGameSpec};
use marl_core::oracles::{
    evaluate_policy_coop, evaluate_policy_compet, shapley_qstar, sup_distance, value_iteration_qstar, weighted_norm,
    EvalDistribution, DEFAULT_MAX_SWEEPS, ORACLE_TOL,
};
use proptest::prelude::*;

fn game_fixture() -> ZeroSumGameSpec {
    random_zero_sum_game(2, vec![2, 2], vec![2, 2], 2, 0.9, 1.0, 0.3, 1).unwrap()
}

fn garnet(n_states: usize, agents: Vec<usize>, gamma: f64, seed: u64) -> MmdpSpec {
    random_garnet(&GarnetParams {
        n_states,
        agents,
        branching: n_states.min(3),
        gamma,
        r_max: 1.0,
        reward_noise: 0.1,
        seed,
    })
    .unwrap()
}

fn pennies_game(gamma: f64) -> ZeroSumGameSpec {
    // Two states, uniform transitions, matching-pennies payoffs everywhere.
    let pay = [1.0, -1.0, -1.0, 1.0];
    let team1: Vec<f64> = pay.iter().chain(&pay).copied().collect();
    let team2: Vec<f64> = team1.iter().map(|v| -v).collect();
    ZeroSumGameSpec::new(2, vec![2], vec![2], vec![0.5; 16], vec![team1], vec![team2], 0.0, gamma, 1.0).unwrap()
}

#[test]
fn chain2_matches_long_brute_force() {
    let spec = chain2();
    let q = value_iteration_qstar(&spec, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let brute = brute_value_iteration(&spec, 10_000);
    assert!(sup_distance(&q.values, &brute).unwrap() <= 1e-10);
}

#[test]
fn game_fixture_matches_long_brute_shapley() {
    let game = game_fixture();
    let q = shapley_qstar(&game, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let brute = brute_shapley(&game, 10_000);
    assert!(sup_distance(&q.values, &brute).unwrap() <= 1e-10);
}

#[test]
fn shapley_special_cases() {
    let mut myopic = game_fixture();
    myopic.gamma = 0.0;
    let q = shapley_qstar(&myopic, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    assert_eq!(q.values, myopic.average_reward());
    let q = shapley_qstar(&pennies_game(0.9), ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let expected = pennies_game(0.9).average_reward();
    // Every state's game value is 0, so the bootstrap adds nothing.
    assert!(sup_distance(&q.values, &expected).unwrap() <= 1e-12);
}

#[test]
fn optimal_policy_evaluates_to_qstar() {
    let spec = garnet(4, vec![2, 2], 0.9, 3);
    let qstar = value_iteration_qstar(&spec, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let policy = MixturePolicy::deterministic(&qstar.greedy_actions(), spec.n_actions());
    let q_pi = evaluate_policy_coop(&spec, &policy).unwrap();
    assert!(qstar.sup_distance(&q_pi.values).unwrap() <= 1e-8);
}

#[test]
fn uniform_policy_on_constant_rewards() {
    let mut spec = garnet(3, vec![2], 0.8, 4);
    for table in &mut spec.reward_mean {
        table.iter_mut().for_each(|r| *r = 0.4);
    }
    let q = evaluate_policy_coop(&spec, &MixturePolicy::uniform(3, 2)).unwrap();
    assert!(q.values.iter().all(|v| (v - 0.4 / 0.2).abs() < 1e-12));
}

#[test]
fn suboptimal_policy_matches_monte_carlo() {
    let spec = chain2();
    let always_left = [0, 0];
    let q = evaluate_policy_coop(&spec, &MixturePolicy::deterministic(&always_left, 2)).unwrap();
    for s in 0..2 {
        for a in 0..2 {
            let (mean, se) = monte_carlo_return(&spec, &always_left, s, a, 100_000, 31 + (s * 2 + a) as u64);
            let exact = q.get(s, a, 0);
            assert!((mean - exact).abs() <= 3.0 * se.max(1e-12), "({s},{a}): {mean} +- {se} vs {exact}");
        }
    }
}

#[test]
fn equilibrium_policy_attains_minimax_q() {
    let game = game_fixture();
    let qstar = shapley_qstar(&game, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let policy = qstar.equilibrium_policy().unwrap();
    let q_pi = evaluate_policy_compet(&game, &policy, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    assert!(qstar.sup_distance(&q_pi.values).unwrap() <= 1e-6);
}

#[test]
fn myopic_competitive_evaluation_ignores_the_policy() {
    let mut game = game_fixture();
    game.gamma = 0.0;
    let n_a = game.n_actions();
    let q = evaluate_policy_compet(&game, &MixturePolicy::deterministic(&[1, 3], n_a), 1e-10, 100).unwrap();
    assert_eq!(q.values, game.average_reward());
}

#[test]
fn pure_policy_matches_opponent_enumeration() {
    let game = game_fixture();
    let n_a = game.n_actions();
    let policy = MixturePolicy::deterministic(&[0, 0], n_a);
    let q = evaluate_policy_compet(&game, &policy, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
    let rows: Vec<Vec<f64>> = (0..2).map(|s| policy.row(s).to_vec()).collect();
    let brute = opponent_enumeration(&game, &rows);
    assert!(sup_distance(&q.values, &brute).unwrap() <= 1e-8);
}

#[test]
fn norm_examples() {
    let q1 = [1.0, 2.0, 3.0, 4.0];
    let q2 = [0.5, 2.5, 3.0, 6.0];
    assert_eq!(weighted_norm(&q1, &q1, &EvalDistribution::uniform(4)).unwrap(), 0.0);
    assert_eq!(weighted_norm(&q1, &q2, &EvalDistribution::point_mass(4, 3)).unwrap(), 2.0);
    let shifted: Vec<f64> = q1.iter().map(|v| v - 0.7).collect();
    assert!((weighted_norm(&q1, &shifted, &EvalDistribution::uniform(4)).unwrap() - 0.7).abs() < 1e-15);
    assert!(weighted_norm(&q1, &q2[..3], &EvalDistribution::uniform(4)).is_err());
    assert!(EvalDistribution::new(vec![0.5, 0.6]).is_err());
}

fn policy_strategy(n_states: usize, n_actions: usize) -> impl Strategy<Value = MixturePolicy> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, n_actions), n_states).prop_map(move |rows| {
        let probs = rows
            .iter()
            .flat_map(|r| {
                let total: f64 = r.iter().sum();
                r.iter().map(move |p| p / total).collect::<Vec<_>>()
            })
            .collect();
        MixturePolicy {
            n_states,
            n_actions,
            probs,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn value_iteration_contracts_every_sweep(seed in any::<u64>(), gamma in 0.5f64..0.97) {
        let spec = garnet(4, vec![2, 2], gamma, seed);
        let q = value_iteration_qstar(&spec, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        for w in q.deltas.windows(2) {
            prop_assert!(w[1] <= gamma * w[0] + 1e-12, "{} > {} * {}", w[1], gamma, w[0]);
        }
        prop_assert!(q.values.iter().all(|v| v.abs() <= spec.q_max()));
    }

    #[test]
    fn shapley_contracts_every_sweep(seed in any::<u64>(), gamma in 0.5f64..0.95) {
        let game = random_zero_sum_game(2, vec![2], vec![3], 2, gamma, 1.0, 0.2, seed).unwrap();
        let q = shapley_qstar(&game, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        for w in q.deltas.windows(2) {
            prop_assert!(w[1] <= gamma * w[0] + 1e-12);
        }
        prop_assert!(q.values.iter().all(|v| v.abs() <= game.q_max()));
    }

    #[test]
    fn optimal_q_dominates_any_policy(seed in any::<u64>(), policy in policy_strategy(4, 4)) {
        let spec = garnet(4, vec![2, 2], 0.9, seed);
        let qstar = value_iteration_qstar(&spec, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        let q_pi = evaluate_policy_coop(&spec, &policy).unwrap();
        for (a, b) in qstar.values.iter().zip(&q_pi.values) {
            prop_assert!(a + 1e-9 >= *b);
        }
    }

    #[test]
    fn minimax_q_dominates_any_maximizer_policy(seed in any::<u64>(), policy in policy_strategy(2, 4)) {
        let game = random_zero_sum_game(2, vec![2, 2], vec![2, 2], 2, 0.9, 1.0, 0.3, seed).unwrap();
        let qstar = shapley_qstar(&game, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        let q_pi = evaluate_policy_compet(&game, &policy, ORACLE_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        for (a, b) in qstar.values.iter().zip(&q_pi.values) {
            prop_assert!(a + 1e-8 >= *b);
        }
    }

    #[test]
    fn weighted_norm_is_below_sup(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0.0f64..1.0), 1..30),
    ) {
        let q1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let q2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let total: f64 = pairs.iter().map(|p| p.2).sum();
        prop_assume!(total > 1e-6);
        let mu = EvalDistribution::new(pairs.iter().map(|p| p.2 / total).collect()).unwrap();
        prop_assert!(weighted_norm(&q1, &q2, &mu).unwrap() <= sup_distance(&q1, &q2).unwrap() + 1e-12);
    }
}
