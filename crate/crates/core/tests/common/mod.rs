//! Independent brute-force oracles shared by the integration tests. Nothing
//! here calls the library's solvers; only plain data is read from the model structs.
#![allow(dead_code)]

use marl_core::model::{chain, MmdpSpec, ZeroSumGameSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).collect())
        .collect()
}

/// Mixed strategy over `support` making the opponent indifferent across
/// `other` (as columns when `rows` is true): solves the square system of
/// indifference equations plus normalization. Returns `(strategy, value)`.
fn indifference(
    payoff: &[Vec<f64>],
    support: &[usize],
    other: &[usize],
    rows: bool,
) -> Option<(Vec<f64>, f64)> {
    let k = support.len();
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (eq, &o) in other.iter().enumerate() {
        for (var, &s) in support.iter().enumerate() {
            m[(eq, var)] = if rows { payoff[s][o] } else { payoff[o][s] };
        }
        m[(eq, k)] = -1.0;
    }
    for var in 0..k {
        m[(k, var)] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = if rows { payoff.len() } else { payoff[0].len() };
    let mut strategy = vec![0.0; n];
    for (var, &s) in support.iter().enumerate() {
        if sol[var] < -1e-9 {
            return None;
        }
        strategy[s] = sol[var].max(0.0);
    }
    Some((strategy, sol[k]))
}

/// Value of a zero-sum matrix game by support enumeration: tries every pair
/// of equal-size supports, solves the indifference equations, and keeps the
/// first pair that is a Nash equilibrium.
pub fn support_enumeration_value(payoff: &[Vec<f64>]) -> f64 {
    let (n_a, n_b) = (payoff.len(), payoff[0].len());
    for size in 1..=n_a.min(n_b) {
        for rows in subsets(n_a, size) {
            for cols in subsets(n_b, size) {
                let Some((x, v)) = indifference(payoff, &rows, &cols, true) else { continue };
                let Some((y, w)) = indifference(payoff, &cols, &rows, false) else { continue };
                if (v - w).abs() > 1e-9 {
                    continue;
                }
                let col_ok = (0..n_b).all(|b| (0..n_a).map(|a| x[a] * payoff[a][b]).sum::<f64>() >= v - 1e-9);
                let row_ok = (0..n_a).all(|a| (0..n_b).map(|b| y[b] * payoff[a][b]).sum::<f64>() <= v + 1e-9);
                if col_ok && row_ok {
                    return v;
                }
            }
        }
    }
    panic!("support enumeration found no equilibrium for {payoff:?}");
}

pub fn random_game(rng: &mut ChaCha8Rng, max_dim: usize) -> Vec<Vec<f64>> {
    let rows = rng.random_range(1..=max_dim);
    let cols = rng.random_range(1..=max_dim);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect()
}

pub fn flat(payoff: &[Vec<f64>]) -> Vec<f64> {
    payoff.iter().flatten().copied().collect()
}

fn mean_reward(spec: &MmdpSpec, cell: usize) -> f64 {
    spec.reward_mean.iter().map(|r| r[cell]).sum::<f64>() / spec.reward_mean.len() as f64
}

fn n_joint(spec: &MmdpSpec) -> usize {
    spec.agents.iter().product()
}

/// `sweeps` rounds of the optimal Bellman backup from zero, read straight
/// off the raw tensors.
pub fn brute_value_iteration(spec: &MmdpSpec, sweeps: usize) -> Vec<f64> {
    let (n_s, n_a) = (spec.n_states, n_joint(spec));
    let mut q = vec![0.0; n_s * n_a];
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..n_s)
            .map(|s| q[s * n_a..(s + 1) * n_a].iter().cloned().fold(f64::MIN, f64::max))
            .collect();
        q = (0..n_s * n_a)
            .map(|cell| {
                let row = &spec.transition[cell * n_s..(cell + 1) * n_s];
                mean_reward(spec, cell) + spec.gamma * row.iter().zip(&v).map(|(p, v)| p * v).sum::<f64>()
            })
            .collect();
    }
    q
}

fn game_reward(game: &ZeroSumGameSpec, cell: usize) -> f64 {
    game.team1_reward_mean.iter().map(|r| r[cell]).sum::<f64>() / game.team1_reward_mean.len() as f64
}

fn game_dims(game: &ZeroSumGameSpec) -> (usize, usize, usize) {
    (
        game.n_states,
        game.team1_agents.iter().product(),
        game.team2_agents.iter().product(),
    )
}

/// Shapley iteration with support-enumeration state values, stopped after
/// `sweeps` rounds or once an exact fixed point repeats.
pub fn brute_shapley(game: &ZeroSumGameSpec, sweeps: usize) -> Vec<f64> {
    let (n_s, n_a, n_b) = game_dims(game);
    let mut q = vec![0.0; n_s * n_a * n_b];
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..n_s)
            .map(|s| {
                let payoff: Vec<Vec<f64>> = (0..n_a)
                    .map(|a| q[(s * n_a + a) * n_b..(s * n_a + a + 1) * n_b].to_vec())
                    .collect();
                support_enumeration_value(&payoff)
            })
            .collect();
        let next: Vec<f64> = (0..q.len())
            .map(|cell| {
                let row = &game.transition[cell * n_s..(cell + 1) * n_s];
                game_reward(game, cell) + game.gamma * row.iter().zip(&v).map(|(p, v)| p * v).sum::<f64>()
            })
            .collect();
        if next == q {
            break;
        }
        q = next;
    }
    q
}

/// `Q_pi` for a fixed Team 1 policy as the elementwise minimum of
/// `Q_{pi,sigma}` over every deterministic stationary Team 2 policy.
pub fn opponent_enumeration(game: &ZeroSumGameSpec, policy: &[Vec<f64>]) -> Vec<f64> {
    let (n_s, n_a, n_b) = game_dims(game);
    let total = n_b.pow(n_s as u32);
    let mut best = vec![f64::INFINITY; n_s * n_a * n_b];
    for code in 0..total {
        let sigma: Vec<usize> = (0..n_s).map(|s| (code / n_b.pow(s as u32)) % n_b).collect();
        // State values: V = r_{pi,sigma} + gamma P_{pi,sigma} V.
        let mut m = DMatrix::<f64>::identity(n_s, n_s);
        let mut r = DVector::<f64>::zeros(n_s);
        for s in 0..n_s {
            for a in 0..n_a {
                let cell = (s * n_a + a) * n_b + sigma[s];
                let p = policy[s][a];
                r[s] += p * game_reward(game, cell);
                for s2 in 0..n_s {
                    m[(s, s2)] -= game.gamma * p * game.transition[cell * n_s + s2];
                }
            }
        }
        let v = m.lu().solve(&r).expect("nonsingular");
        for (cell, slot) in best.iter_mut().enumerate() {
            let row = &game.transition[cell * n_s..(cell + 1) * n_s];
            let q = game_reward(game, cell) + game.gamma * row.iter().zip(v.iter()).map(|(p, v)| p * v).sum::<f64>();
            *slot = slot.min(q);
        }
    }
    best
}

/// Two-state chain with one voting agent: moving right earns the goal reward.
pub fn chain2() -> MmdpSpec {
    chain(2, 1, 0.1, 0.9, 1.0, 0.0).unwrap()
}

/// Monte-Carlo estimate (mean, standard error) of the discounted return from
/// `(s, a)` under a deterministic policy, with rollouts truncated once
/// `gamma^h` drops below 1e-12.
pub fn monte_carlo_return(
    spec: &MmdpSpec,
    actions: &[usize],
    s0: usize,
    a0: usize,
    rollouts: usize,
    seed: u64,
) -> (f64, f64) {
    let (n_s, n_a) = (spec.n_states, n_joint(spec));
    let horizon = (1e-12f64.ln() / spec.gamma.ln()).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let (mut s, mut a) = (s0, a0);
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..horizon {
            let cell = s * n_a + a;
            total += discount * mean_reward(spec, cell);
            discount *= spec.gamma;
            let u: f64 = rng.random();
            let row = &spec.transition[cell * n_s..(cell + 1) * n_s];
            let mut acc = 0.0;
            let mut next = n_s - 1;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
            a = actions[s];
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
