//! Exact tabular ground truth: optimal and minimax Q-functions, policy
//! evaluation against fixed or best-responding opponents, and the weighted
//! error norm used to score learned policies.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{MarlError, Result};
use crate::features::FeatureMap;
use crate::fqi::{state_game, MixturePolicy};
use crate::matrix_games::{solve_minimax, MatrixGame};
use crate::model::{TabularModel, ZeroSumGameSpec};

pub const ORACLE_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ValueIteration,
    Shapley,
    PolicyEvaluation,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::ValueIteration => "value-iteration",
            Provenance::Shapley => "shapley",
            Provenance::PolicyEvaluation => "policy-eval",
        }
    }
}

/// Dense Q-table over `(s, a, b)` cells, flattened as `(s*A + a)*B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_opponent_actions: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Sweeps performed; 0 for a direct solve.
    pub sweeps: usize,
    /// `||Q_{n+1} - Q_n||_inf` for each sweep.
    pub deltas: Vec<f64>,
}

impl TabularQ {
    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.values[(s * self.n_actions + a) * self.n_opponent_actions + b]
    }

    pub fn sup_distance(&self, other: &[f64]) -> Result<f64> {
        sup_distance(&self.values, other)
    }

    /// Greedy joint action per state (lowest index on ties); cooperative only.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let row = &self.values[s * self.n_actions..(s + 1) * self.n_actions];
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.iter().position(|&q| q == best).unwrap_or(0)
            })
            .collect()
    }

    pub fn state_game(&self, s: usize) -> Result<MatrixGame> {
        let width = self.n_actions * self.n_opponent_actions;
        MatrixGame::new(
            self.n_actions,
            self.n_opponent_actions,
            self.values[s * width..(s + 1) * width].to_vec(),
        )
    }

    /// Maximin strategy of the row team at every state.
    pub fn equilibrium_policy(&self) -> Result<MixturePolicy> {
        let mut probs = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            probs.extend(solve_minimax(&self.state_game(s)?)?.row_strategy);
        }
        Ok(MixturePolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "s", "a", "b", "q", "provenance"])?;
        for (index, q) in self.values.iter().enumerate() {
            let b = index % self.n_opponent_actions;
            let a = (index / self.n_opponent_actions) % self.n_actions;
            let s = index / (self.n_opponent_actions * self.n_actions);
            w.write_record([
                index.to_string(),
                s.to_string(),
                a.to_string(),
                b.to_string(),
                format!("{q:.17e}"),
                self.provenance.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sup_distance(q1: &[f64], q2: &[f64]) -> Result<f64> {
    if q1.len() != q2.len() {
        return Err(MarlError::Dimension {
            expected: q1.len(),
            got: q2.len(),
            context: "Q-table comparison",
        });
    }
    Ok(q1.iter().zip(q2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// `r(s,a,b) + gamma * sum_s' P(s'|s,a,b) v(s')` for every cell.
fn backup<M: TabularModel + ?Sized>(model: &M, reward: &[f64], next_value: &[f64]) -> Vec<f64> {
    let (n_a, n_b) = (model.n_actions(), model.n_opponent_actions());
    let gamma = model.gamma();
    let mut out = Vec::with_capacity(model.n_cells());
    for s in 0..model.n_states() {
        for a in 0..n_a {
            for b in 0..n_b {
                let ev: f64 = model
                    .next_state_probs(s, a, b)
                    .iter()
                    .zip(next_value)
                    .map(|(p, v)| p * v)
                    .sum();
                out.push(reward[model.cell(s, a, b)] + gamma * ev);
            }
        }
    }
    out
}

fn max_over_actions<M: TabularModel + ?Sized>(model: &M, q: &[f64]) -> Vec<f64> {
    let n_a = model.n_actions();
    q.chunks(n_a)
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn game_values<M: TabularModel + ?Sized>(model: &M, q: &[f64]) -> Result<Vec<f64>> {
    let (n_a, n_b) = (model.n_actions(), model.n_opponent_actions());
    q.chunks(n_a * n_b)
        .map(|block| Ok(solve_minimax(&MatrixGame::new(n_a, n_b, block.to_vec())?)?.value))
        .collect()
}

/// The optimal Bellman operator: `max` for cooperative models, the matrix-game
/// value for games.
pub fn bellman_optimal<M: TabularModel + ?Sized>(model: &M, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != model.n_cells() {
        return Err(MarlError::Dimension {
            expected: model.n_cells(),
            got: q.len(),
            context: "Q-table vs model cells",
        });
    }
    let next = if model.is_game() {
        game_values(model, q)?
    } else {
        max_over_actions(model, q)
    };
    Ok(backup(model, &model.average_reward(), &next))
}

/// The averaged Bellman operator on a vector of per-agent tables indexed by
/// `features`: the bootstrap term is the mean over agents of each agent's
/// max (or game value) at the next state.
pub fn average_bellman<M: TabularModel + ?Sized>(
    model: &M,
    tables: &[Vec<f64>],
    features: &FeatureMap,
) -> Result<Vec<f64>> {
    if tables.is_empty() {
        return Err(MarlError::Argument("no agent tables".into()));
    }
    let n_s = model.n_states();
    let mut next = vec![0.0; n_s];
    for table in tables {
        for (s, v) in next.iter_mut().enumerate() {
            *v += if model.is_game() {
                solve_minimax(&state_game(table, features, s)?)?.value
            } else {
                (0..model.n_actions())
                    .map(|a| table[features.cell(s, a, 0)])
                    .fold(f64::NEG_INFINITY, f64::max)
            };
        }
    }
    next.iter_mut().for_each(|v| *v /= tables.len() as f64);
    Ok(backup(model, &model.average_reward(), &next))
}

fn sweep_threshold(gamma: f64, tol: f64) -> f64 {
    if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    }
}

/// Iterates `Q <- op(Q)` from zero until the successive gap certifies `tol`
/// sup-norm distance to the fixed point.
fn iterate<F>(
    op: F,
    n_cells: usize,
    gamma: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return Err(MarlError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let threshold = sweep_threshold(gamma, tol);
    let mut q = vec![0.0; n_cells];
    let mut deltas = Vec::new();
    for _ in 0..max_sweeps {
        let next = op(&q)?;
        let delta = sup_distance(&next, &q)?;
        deltas.push(delta);
        q = next;
        if delta <= threshold {
            return Ok((q, deltas));
        }
    }
    Err(MarlError::NoConvergence {
        sweeps: max_sweeps,
        last_delta: deltas.last().copied().unwrap_or(f64::NAN),
    })
}

/// Optimal Q-function of a cooperative model by value iteration.
pub fn value_iteration_qstar<M: TabularModel + ?Sized>(
    model: &M,
    tol: f64,
    max_sweeps: usize,
) -> Result<TabularQ> {
    if model.is_game() {
        return Err(MarlError::Argument("value iteration expects a cooperative model; use shapley_qstar".into()));
    }
    let (values, deltas) = iterate(
        |q| bellman_optimal(model, q),
        model.n_cells(),
        model.gamma(),
        tol,
        max_sweeps,
    )?;
    Ok(TabularQ {
        n_states: model.n_states(),
        n_actions: model.n_actions(),
        n_opponent_actions: 1,
        values,
        provenance: Provenance::ValueIteration,
        sweeps: deltas.len(),
        deltas,
    })
}

/// Minimax Q-function of a zero-sum game by Shapley iteration (Team 1 maximizes).
pub fn shapley_qstar(game: &ZeroSumGameSpec, tol: f64, max_sweeps: usize) -> Result<TabularQ> {
    let (values, deltas) = iterate(
        |q| bellman_optimal(game, q),
        game.n_cells(),
        game.gamma(),
        tol,
        max_sweeps,
    )?;
    Ok(TabularQ {
        n_states: game.n_states(),
        n_actions: game.n_actions(),
        n_opponent_actions: game.n_opponent_actions(),
        values,
        provenance: Provenance::Shapley,
        sweeps: deltas.len(),
        deltas,
    })
}

fn check_policy<M: TabularModel + ?Sized>(model: &M, policy: &MixturePolicy) -> Result<()> {
    if policy.n_states != model.n_states() || policy.n_actions != model.n_actions() {
        return Err(MarlError::Argument(format!(
            "policy shape {}x{} does not match model {}x{}",
            policy.n_states,
            policy.n_actions,
            model.n_states(),
            model.n_actions()
        )));
    }
    for s in 0..policy.n_states {
        let row = policy.row(s);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= -1e-10)) || (total - 1.0).abs() > 1e-10 {
            return Err(MarlError::Argument(format!("policy row {s} is not a distribution")));
        }
    }
    Ok(())
}

/// `Q_pi` of a cooperative model by solving `(I - gamma P_pi) Q = r` directly.
pub fn evaluate_policy_coop<M: TabularModel + ?Sized>(model: &M, policy: &MixturePolicy) -> Result<TabularQ> {
    if model.is_game() {
        return Err(MarlError::Argument("use evaluate_policy_compet for games".into()));
    }
    check_policy(model, policy)?;
    let (n_s, n_a) = (model.n_states(), model.n_actions());
    let n = n_s * n_a;
    let gamma = model.gamma();
    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..n_s {
        for a in 0..n_a {
            let row = s * n_a + a;
            for (next, &p) in model.next_state_probs(s, a, 0).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (a2, &pi) in policy.row(next).iter().enumerate() {
                    system[(row, next * n_a + a2)] -= gamma * p * pi;
                }
            }
        }
    }
    let rhs = DVector::from_vec(model.average_reward());
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MarlError::Model("policy evaluation system is singular".into()))?;
    Ok(TabularQ {
        n_states: n_s,
        n_actions: n_a,
        n_opponent_actions: 1,
        values: solution.iter().copied().collect(),
        provenance: Provenance::PolicyEvaluation,
        sweeps: 0,
        deltas: Vec::new(),
    })
}

/// `Q_pi = min_sigma Q_{pi,sigma}` for a fixed Team 1 policy: Team 2 faces an
/// MDP over its joint actions and minimizes Team 1's return.
pub fn evaluate_policy_compet(
    game: &ZeroSumGameSpec,
    policy: &MixturePolicy,
    tol: f64,
    max_sweeps: usize,
) -> Result<TabularQ> {
    check_policy(game, policy)?;
    let (n_a, n_b) = (game.n_actions(), game.n_opponent_actions());
    let reward = game.average_reward();
    let state_value = |q: &[f64]| -> Vec<f64> {
        (0..game.n_states())
            .map(|s| {
                (0..n_b)
                    .map(|b| {
                        (0..n_a)
                            .map(|a| policy.prob(s, a) * q[game.cell(s, a, b)])
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let (values, deltas) = iterate(
        |q| Ok(backup(game, &reward, &state_value(q))),
        game.n_cells(),
        game.gamma(),
        tol,
        max_sweeps,
    )?;
    Ok(TabularQ {
        n_states: game.n_states(),
        n_actions: n_a,
        n_opponent_actions: n_b,
        values,
        provenance: Provenance::PolicyEvaluation,
        sweeps: deltas.len(),
        deltas,
    })
}

/// Probability vector over cells used to weight errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDistribution {
    mu: Vec<f64>,
}

impl EvalDistribution {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        let total: f64 = mu.iter().sum();
        if mu.is_empty() || mu.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(MarlError::Argument(format!(
                "evaluation distribution must lie on the simplex (sum {total})"
            )));
        }
        Ok(Self { mu })
    }

    pub fn uniform(n_cells: usize) -> Self {
        Self {
            mu: vec![1.0 / n_cells as f64; n_cells],
        }
    }

    pub fn point_mass(n_cells: usize, cell: usize) -> Self {
        let mut mu = vec![0.0; n_cells];
        mu[cell] = 1.0;
        Self { mu }
    }

    pub fn weights(&self) -> &[f64] {
        &self.mu
    }
}

/// `sqrt(sum mu (q1 - q2)^2)`.
pub fn weighted_norm(q1: &[f64], q2: &[f64], mu: &EvalDistribution) -> Result<f64> {
    if q1.len() != q2.len() || q1.len() != mu.mu.len() {
        return Err(MarlError::Dimension {
            expected: mu.mu.len(),
            got: if q1.len() != mu.mu.len() { q1.len() } else { q2.len() },
            context: "weighted norm operands",
        });
    }
    Ok(q1
        .iter()
        .zip(q2)
        .zip(&mu.mu)
        .map(|((a, b), m)| m * (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}
