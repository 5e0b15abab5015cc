//! Tabular networked multi-agent MDPs, two-team zero-sum Markov games, and
//! batch data collection under a fixed behavior policy.
//!
//! Every model is addressed through [`TabularModel`], which exposes the
//! learning team's view: `n_actions` is the joint action count of the team
//! being trained and `n_opponent_actions` is 1 for cooperative models. A
//! state-action cell is flattened as `(s * A + a) * B + b`.

mod generators;
mod spec;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarlError, Result};

pub use generators::{chain, gridworld, random_garnet, random_zero_sum_game, GarnetParams};
pub use spec::{MmdpSpec, Violation, ViolationKind, ZeroSumGameSpec};

/// Tolerance for stochasticity and zero-sum identities.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Default number of discarded steps before recording a trajectory.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Flat encoding of per-agent actions into a joint action index, agent 0
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionCodec {
    sizes: Vec<usize>,
}

impl JointActionCodec {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.sizes.len()
    }

    /// Number of joint actions, the product of the per-agent counts.
    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, actions: &[usize]) -> Result<usize> {
        if actions.len() != self.sizes.len() {
            return Err(MarlError::Dimension {
                expected: self.sizes.len(),
                got: actions.len(),
                context: "joint action encode",
            });
        }
        let mut index = 0;
        let mut stride = 1;
        for (agent, (&a, &n)) in actions.iter().zip(&self.sizes).enumerate() {
            if a >= n {
                return Err(MarlError::Argument(format!(
                    "action {a} out of range for agent {agent} with {n} actions"
                )));
            }
            index += a * stride;
            stride *= n;
        }
        Ok(index)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        self.sizes
            .iter()
            .map(|&n| {
                let a = index % n;
                index /= n;
                a
            })
            .collect()
    }
}

/// One recorded step `(s_t, a_t [, b_t], s_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub b: Option<usize>,
    pub next: usize,
}

impl Transition {
    pub fn opponent_action(&self) -> usize {
        self.b.unwrap_or(0)
    }

    /// Exchanges the roles of the two teams.
    pub fn swap_roles(&self) -> Transition {
        Transition {
            s: self.s,
            a: self.b.unwrap_or(0),
            b: Some(self.a),
            next: self.next,
        }
    }
}

/// The learning team's view of a finite model.
pub trait TabularModel: Sync {
    fn n_states(&self) -> usize;

    /// Joint action count of the learning team.
    fn n_actions(&self) -> usize;

    /// Joint action count of the opposing team (1 for cooperative models).
    fn n_opponent_actions(&self) -> usize {
        1
    }

    /// Number of agents in the learning team.
    fn n_agents(&self) -> usize;

    fn is_game(&self) -> bool {
        false
    }

    fn gamma(&self) -> f64;

    fn r_max(&self) -> f64;

    fn q_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma())
    }

    fn n_cells(&self) -> usize {
        self.n_states() * self.n_actions() * self.n_opponent_actions()
    }

    fn cell(&self, s: usize, a: usize, b: usize) -> usize {
        (s * self.n_actions() + a) * self.n_opponent_actions() + b
    }

    fn transition_cell(&self, tr: &Transition) -> usize {
        self.cell(tr.s, tr.a, tr.opponent_action())
    }

    /// Next-state distribution `P(. | s, a, b)`.
    fn next_state_probs(&self, s: usize, a: usize, b: usize) -> &[f64];

    /// Learning team's averaged mean reward, one entry per cell.
    fn average_reward(&self) -> Vec<f64>;

    /// Per-agent noisy rewards for each tuple.
    fn sample_rewards(&self, tuples: &[Transition], iteration_seed: u64) -> Result<RewardDraw>;

    /// Lists every broken invariant; empty iff the model is well formed.
    fn validate(&self) -> Vec<Violation>;
}

/// Stochastic behavior policy over the model's joint action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BehaviorPolicy {
    Uniform,
    /// Row-major `[s][a * B + b]` probabilities.
    Table(Vec<f64>),
}

impl BehaviorPolicy {
    fn check<M: TabularModel + ?Sized>(&self, model: &M) -> Result<()> {
        if let BehaviorPolicy::Table(probs) = self {
            let width = model.n_actions() * model.n_opponent_actions();
            if probs.len() != model.n_states() * width {
                return Err(MarlError::Dimension {
                    expected: model.n_states() * width,
                    got: probs.len(),
                    context: "behavior policy table",
                });
            }
            for (s, row) in probs.chunks(width).enumerate() {
                if row.iter().any(|&p| !(p > 0.0)) {
                    return Err(MarlError::Argument(format!(
                        "behavior policy must give every joint action positive probability (state {s})"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(MarlError::Argument(format!(
                        "behavior policy row {s} sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, s: usize, width: usize, rng: &mut ChaCha8Rng) -> usize {
        match self {
            BehaviorPolicy::Uniform => rng.random_range(0..width),
            BehaviorPolicy::Table(probs) => {
                sample_index(&probs[s * width..(s + 1) * width], rng.random())
            }
        }
    }
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// A contiguous sample path collected under a behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tuples: Vec<Transition>,
    pub behavior: BehaviorPolicy,
    pub burn_in: usize,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let game = self.tuples.iter().any(|t| t.b.is_some());
        let mut w = csv::Writer::from_writer(writer);
        if game {
            w.write_record(["t", "s", "a", "b", "s_next"])?;
        } else {
            w.write_record(["t", "s", "a", "s_next"])?;
        }
        for (t, tr) in self.tuples.iter().enumerate() {
            let mut row = vec![t.to_string(), tr.s.to_string(), tr.a.to_string()];
            if game {
                row.push(tr.opponent_action().to_string());
            }
            row.push(tr.next.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the tuples written by [`Trajectory::write_csv`]. Metadata that is
    /// not part of the CSV (behavior, burn-in, seed) is left at defaults.
    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (s_col, a_col, next_col) = match (col("s"), col("a"), col("s_next")) {
            (Some(s), Some(a), Some(n)) => (s, a, n),
            _ => {
                return Err(MarlError::Argument(
                    "trajectory CSV needs columns s, a, s_next".into(),
                ))
            }
        };
        let b_col = col("b");
        let parse = |rec: &csv::StringRecord, i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| MarlError::Argument(format!("bad trajectory field in {rec:?}")))
        };
        let mut tuples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            tuples.push(Transition {
                s: parse(&rec, s_col)?,
                a: parse(&rec, a_col)?,
                b: b_col.map(|c| parse(&rec, c)).transpose()?,
                next: parse(&rec, next_col)?,
            });
        }
        Ok(Trajectory {
            tuples,
            behavior: BehaviorPolicy::Uniform,
            burn_in: 0,
            seed: 0,
        })
    }
}

/// Per-agent reward samples aligned with a list of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDraw {
    /// `rewards[i][t]` for agent `i` of the learning team.
    pub rewards: Vec<Vec<f64>>,
    /// Opposing team's samples, for games.
    pub opponent: Option<Vec<Vec<f64>>>,
    pub iteration_seed: u64,
}

impl RewardDraw {
    pub fn len(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_transition_rows<M: TabularModel + ?Sized>(model: &M) -> Result<()> {
    for s in 0..model.n_states() {
        for a in 0..model.n_actions() {
            for b in 0..model.n_opponent_actions() {
                let row = model.next_state_probs(s, a, b);
                let total: f64 = row.iter().sum();
                if !(total > 0.5) || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(MarlError::Model(format!(
                        "transition row (s={s}, a={a}, b={b}) is not a distribution (sum {total})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Simulates the model from state 0, discards `burn_in` steps, and records
/// the next `len` transitions. Deterministic given `seed`.
pub fn sample_trajectory<M: TabularModel + ?Sized>(
    model: &M,
    behavior: &BehaviorPolicy,
    len: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(MarlError::Argument("trajectory length must be at least 1".into()));
    }
    check_transition_rows(model)?;
    behavior.check(model)?;

    let n_b = model.n_opponent_actions();
    let width = model.n_actions() * n_b;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0usize;
    let mut tuples = Vec::with_capacity(len);
    for step in 0..burn_in + len {
        let joint = behavior.draw(s, width, &mut rng);
        let (a, b) = (joint / n_b, joint % n_b);
        let next = sample_index(model.next_state_probs(s, a, b), rng.random());
        if step >= burn_in {
            tuples.push(Transition {
                s,
                a,
                b: model.is_game().then_some(b),
                next,
            });
        }
        s = next;
    }
    Ok(Trajectory {
        tuples,
        behavior: behavior.clone(),
        burn_in,
        seed,
    })
}

/// Regression rows with weights: either a sampled trajectory (weight 1/T per
/// tuple) or the exhaustive enumeration of every `(s, a, b, s')` with weight
/// `P(s'|s,a,b) / |cells|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tuples: Vec<Transition>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn from_trajectory(trajectory: &Trajectory) -> Self {
        let n = trajectory.len();
        Self {
            tuples: trajectory.tuples.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// One row per reachable `(s, a, b, s')`, weighted by its exact
    /// transition probability. Removes all sampling noise from the fit.
    pub fn exhaustive<M: TabularModel + ?Sized>(model: &M) -> Self {
        let n_cells = model.n_cells() as f64;
        let mut tuples = Vec::new();
        let mut weights = Vec::new();
        for s in 0..model.n_states() {
            for a in 0..model.n_actions() {
                for b in 0..model.n_opponent_actions() {
                    for (next, &p) in model.next_state_probs(s, a, b).iter().enumerate() {
                        if p > 0.0 {
                            tuples.push(Transition {
                                s,
                                a,
                                b: model.is_game().then_some(b),
                                next,
                            });
                            weights.push(p / n_cells);
                        }
                    }
                }
            }
        }
        Self { tuples, weights }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn swap_roles(&self) -> Self {
        Self {
            tuples: self.tuples.iter().map(Transition::swap_roles).collect(),
            weights: self.weights.clone(),
        }
    }
}

pub(crate) fn check_indices<M: TabularModel + ?Sized>(model: &M, tuples: &[Transition]) -> Result<()> {
    for (t, tr) in tuples.iter().enumerate() {
        if tr.s >= model.n_states()
            || tr.next >= model.n_states()
            || tr.a >= model.n_actions()
            || tr.opponent_action() >= model.n_opponent_actions()
        {
            return Err(MarlError::Argument(format!(
                "tuple {t} ({tr:?}) has an index outside the model"
            )));
        }
    }
    Ok(())
}

/// Stable per-iteration seed derived from a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
