use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_indices, JointActionCodec, RewardDraw, TabularModel, Transition, STRUCTURE_TOL};
use crate::error::{MarlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Stochasticity,
    ZeroSum,
    RewardBound,
    Discount,
    Shape,
}

/// One broken model invariant, with the offending index.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.location, self.detail)
    }
}

/// Tabular networked multi-agent MDP.
///
/// `transition` is row-major `[s][a][s']` over joint actions; `reward_mean[i]`
/// holds agent `i`'s mean reward per `s * A + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdpSpec {
    pub n_states: usize,
    pub agents: Vec<usize>,
    pub transition: Vec<f64>,
    pub reward_mean: Vec<Vec<f64>>,
    /// Half-width of the uniform noise added to sampled rewards.
    pub reward_noise: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl MmdpSpec {
    /// Checks shapes only; invariants are reported by [`TabularModel::validate`].
    pub fn new(
        n_states: usize,
        agents: Vec<usize>,
        transition: Vec<f64>,
        reward_mean: Vec<Vec<f64>>,
        reward_noise: f64,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || agents.is_empty() || agents.iter().any(|&n| n == 0) {
            return Err(MarlError::Model(
                "need at least one state, one agent, and one action per agent".into(),
            ));
        }
        let n_actions: usize = agents.iter().product();
        let expected = n_states * n_actions * n_states;
        if transition.len() != expected {
            return Err(MarlError::Dimension {
                expected,
                got: transition.len(),
                context: "MMDP transition tensor",
            });
        }
        if reward_mean.len() != agents.len() {
            return Err(MarlError::Dimension {
                expected: agents.len(),
                got: reward_mean.len(),
                context: "MMDP reward agents",
            });
        }
        for r in &reward_mean {
            if r.len() != n_states * n_actions {
                return Err(MarlError::Dimension {
                    expected: n_states * n_actions,
                    got: r.len(),
                    context: "MMDP reward table",
                });
            }
        }
        Ok(Self {
            n_states,
            agents,
            transition,
            reward_mean,
            reward_noise,
            gamma,
            r_max,
        })
    }

    pub fn codec(&self) -> JointActionCodec {
        JointActionCodec::new(&self.agents)
    }

    fn joint_actions(&self) -> usize {
        self.agents.iter().product()
    }
}

impl TabularModel for MmdpSpec {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.joint_actions()
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn next_state_probs(&self, s: usize, a: usize, _b: usize) -> &[f64] {
        let start = (s * self.joint_actions() + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    fn average_reward(&self) -> Vec<f64> {
        mean_over_agents(&self.reward_mean)
    }

    fn sample_rewards(&self, tuples: &[Transition], iteration_seed: u64) -> Result<RewardDraw> {
        check_indices(self, tuples)?;
        let n = self.agents.len();
        let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed);
        let mut rewards = vec![Vec::with_capacity(tuples.len()); n];
        for tr in tuples {
            let cell = self.cell(tr.s, tr.a, 0);
            for (i, out) in rewards.iter_mut().enumerate() {
                let u: f64 = rng.random();
                let r = self.reward_mean[i][cell] + self.reward_noise * (2.0 * u - 1.0);
                out.push(r.clamp(-self.r_max, self.r_max));
            }
        }
        Ok(RewardDraw {
            rewards,
            opponent: None,
            iteration_seed,
        })
    }

    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_common(self, &mut out);
        for (i, table) in self.reward_mean.iter().enumerate() {
            check_reward_bound(table, self.r_max, &format!("agent {i}"), self.n_actions(), 1, &mut out);
        }
        out
    }
}

/// Two-team zero-sum Markov game. Team 1 (joint actions `a`) maximizes.
///
/// `transition` is row-major `[s][a][b][s']`; reward tables are indexed by the
/// cell `(s * A + a) * B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSumGameSpec {
    pub n_states: usize,
    pub team1_agents: Vec<usize>,
    pub team2_agents: Vec<usize>,
    pub transition: Vec<f64>,
    pub team1_reward_mean: Vec<Vec<f64>>,
    pub team2_reward_mean: Vec<Vec<f64>>,
    pub reward_noise: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl ZeroSumGameSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        team1_agents: Vec<usize>,
        team2_agents: Vec<usize>,
        transition: Vec<f64>,
        team1_reward_mean: Vec<Vec<f64>>,
        team2_reward_mean: Vec<Vec<f64>>,
        reward_noise: f64,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0
            || team1_agents.is_empty()
            || team2_agents.is_empty()
            || team1_agents.iter().chain(&team2_agents).any(|&n| n == 0)
        {
            return Err(MarlError::Model(
                "need at least one state, one agent per team, and one action per agent".into(),
            ));
        }
        let a: usize = team1_agents.iter().product();
        let b: usize = team2_agents.iter().product();
        let cells = n_states * a * b;
        if transition.len() != cells * n_states {
            return Err(MarlError::Dimension {
                expected: cells * n_states,
                got: transition.len(),
                context: "game transition tensor",
            });
        }
        for (tables, agents, context) in [
            (&team1_reward_mean, &team1_agents, "team 1 rewards"),
            (&team2_reward_mean, &team2_agents, "team 2 rewards"),
        ] {
            if tables.len() != agents.len() {
                return Err(MarlError::Dimension {
                    expected: agents.len(),
                    got: tables.len(),
                    context,
                });
            }
            if let Some(bad) = tables.iter().find(|t| t.len() != cells) {
                return Err(MarlError::Dimension {
                    expected: cells,
                    got: bad.len(),
                    context,
                });
            }
        }
        Ok(Self {
            n_states,
            team1_agents,
            team2_agents,
            transition,
            team1_reward_mean,
            team2_reward_mean,
            reward_noise,
            gamma,
            r_max,
        })
    }

    pub fn team1_codec(&self) -> JointActionCodec {
        JointActionCodec::new(&self.team1_agents)
    }

    pub fn team2_codec(&self) -> JointActionCodec {
        JointActionCodec::new(&self.team2_agents)
    }

    pub fn n_team2_actions(&self) -> usize {
        self.team2_agents.iter().product()
    }

    /// Team 2's averaged mean reward per cell.
    pub fn team2_average_reward(&self) -> Vec<f64> {
        mean_over_agents(&self.team2_reward_mean)
    }

    /// The same game seen from Team 2: roles, action axes and reward tables
    /// exchanged, so Team 2 becomes the maximizer of its own averaged reward.
    pub fn swap_teams(&self) -> ZeroSumGameSpec {
        let a = self.n_actions();
        let b = self.n_team2_actions();
        let s_n = self.n_states;
        let mut transition = vec![0.0; self.transition.len()];
        let swap_table = |table: &Vec<f64>| {
            let mut out = vec![0.0; table.len()];
            for s in 0..s_n {
                for ai in 0..a {
                    for bi in 0..b {
                        out[(s * b + bi) * a + ai] = table[(s * a + ai) * b + bi];
                    }
                }
            }
            out
        };
        for s in 0..s_n {
            for ai in 0..a {
                for bi in 0..b {
                    let src = ((s * a + ai) * b + bi) * s_n;
                    let dst = ((s * b + bi) * a + ai) * s_n;
                    transition[dst..dst + s_n].copy_from_slice(&self.transition[src..src + s_n]);
                }
            }
        }
        ZeroSumGameSpec {
            n_states: s_n,
            team1_agents: self.team2_agents.clone(),
            team2_agents: self.team1_agents.clone(),
            transition,
            team1_reward_mean: self.team2_reward_mean.iter().map(swap_table).collect(),
            team2_reward_mean: self.team1_reward_mean.iter().map(swap_table).collect(),
            reward_noise: self.reward_noise,
            gamma: self.gamma,
            r_max: self.r_max,
        }
    }
}

impl TabularModel for ZeroSumGameSpec {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.team1_agents.iter().product()
    }

    fn n_opponent_actions(&self) -> usize {
        self.n_team2_actions()
    }

    fn n_agents(&self) -> usize {
        self.team1_agents.len()
    }

    fn is_game(&self) -> bool {
        true
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn next_state_probs(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let start = self.cell(s, a, b) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    fn average_reward(&self) -> Vec<f64> {
        mean_over_agents(&self.team1_reward_mean)
    }

    /// Draws one noise value per agent of both teams, centers the vector so it
    /// sums to zero, and shrinks it uniformly if needed to keep every reward
    /// inside `[-R_max, R_max]`. The zero-sum identity therefore holds per tuple.
    fn sample_rewards(&self, tuples: &[Transition], iteration_seed: u64) -> Result<RewardDraw> {
        check_indices(self, tuples)?;
        let n = self.team1_agents.len();
        let m = self.team2_agents.len();
        let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed);
        let mut team1 = vec![Vec::with_capacity(tuples.len()); n];
        let mut team2 = vec![Vec::with_capacity(tuples.len()); m];
        let mut means = vec![0.0; n + m];
        let mut noise = vec![0.0; n + m];
        for tr in tuples {
            let cell = self.transition_cell(tr);
            for (k, mean) in means.iter_mut().enumerate() {
                *mean = if k < n {
                    self.team1_reward_mean[k][cell]
                } else {
                    self.team2_reward_mean[k - n][cell]
                };
            }
            for e in noise.iter_mut() {
                let u: f64 = rng.random();
                *e = self.reward_noise * (2.0 * u - 1.0);
            }
            let centre = noise.iter().sum::<f64>() / (n + m) as f64;
            let mut scale: f64 = 1.0;
            for (e, &mu) in noise.iter_mut().zip(&means) {
                *e -= centre;
                if *e > 0.0 && mu + *e > self.r_max {
                    scale = scale.min(((self.r_max - mu) / *e).max(0.0));
                } else if *e < 0.0 && mu + *e < -self.r_max {
                    scale = scale.min(((-self.r_max - mu) / *e).max(0.0));
                }
            }
            for k in 0..n + m {
                let r = means[k] + scale * noise[k];
                if k < n {
                    team1[k].push(r);
                } else {
                    team2[k - n].push(r);
                }
            }
        }
        Ok(RewardDraw {
            rewards: team1,
            opponent: Some(team2),
            iteration_seed,
        })
    }

    fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_common(self, &mut out);
        let (a, b) = (self.n_actions(), self.n_team2_actions());
        for (i, table) in self.team1_reward_mean.iter().enumerate() {
            check_reward_bound(table, self.r_max, &format!("team 1 agent {i}"), a, b, &mut out);
        }
        for (j, table) in self.team2_reward_mean.iter().enumerate() {
            check_reward_bound(table, self.r_max, &format!("team 2 agent {j}"), a, b, &mut out);
        }
        for cell in 0..self.n_cells() {
            let total: f64 = self
                .team1_reward_mean
                .iter()
                .chain(&self.team2_reward_mean)
                .map(|t| t[cell])
                .sum();
            if total.abs() > STRUCTURE_TOL {
                let (s, ai, bi) = (cell / (a * b), (cell / b) % a, cell % b);
                out.push(Violation {
                    kind: ViolationKind::ZeroSum,
                    location: format!("(s={s}, a={ai}, b={bi})"),
                    detail: format!("team rewards sum to {total:e}"),
                });
            }
        }
        out
    }
}

fn mean_over_agents(tables: &[Vec<f64>]) -> Vec<f64> {
    let n = tables.len() as f64;
    let len = tables.first().map_or(0, Vec::len);
    (0..len)
        .map(|c| tables.iter().map(|t| t[c]).sum::<f64>() / n)
        .collect()
}

fn check_common<M: TabularModel>(model: &M, out: &mut Vec<Violation>) {
    let gamma = model.gamma();
    if !(gamma > 0.0 && gamma < 1.0) {
        out.push(Violation {
            kind: ViolationKind::Discount,
            location: "gamma".into(),
            detail: format!("discount {gamma} not in (0, 1)"),
        });
    }
    if !(model.r_max() > 0.0) || !model.r_max().is_finite() {
        out.push(Violation {
            kind: ViolationKind::Shape,
            location: "r_max".into(),
            detail: format!("R_max {} must be positive and finite", model.r_max()),
        });
    }
    for s in 0..model.n_states() {
        for a in 0..model.n_actions() {
            for b in 0..model.n_opponent_actions() {
                let row = model.next_state_probs(s, a, b);
                let location = if model.is_game() {
                    format!("P(.|s={s}, a={a}, b={b})")
                } else {
                    format!("P(.|s={s}, a={a})")
                };
                if let Some(p) = row.iter().find(|p| !(**p >= 0.0)) {
                    out.push(Violation {
                        kind: ViolationKind::Stochasticity,
                        location: location.clone(),
                        detail: format!("entry {p} is negative or not finite"),
                    });
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STRUCTURE_TOL {
                    out.push(Violation {
                        kind: ViolationKind::Stochasticity,
                        location,
                        detail: format!("row sums to {total}"),
                    });
                }
            }
        }
    }
}

fn check_reward_bound(
    table: &[f64],
    r_max: f64,
    who: &str,
    n_a: usize,
    n_b: usize,
    out: &mut Vec<Violation>,
) {
    for (cell, &r) in table.iter().enumerate() {
        if !(r.abs() <= r_max) {
            let (s, a, b) = (cell / (n_a * n_b), (cell / n_b) % n_a, cell % n_b);
            out.push(Violation {
                kind: ViolationKind::RewardBound,
                location: format!("{who} (s={s}, a={a}, b={b})"),
                detail: format!("|{r}| exceeds R_max = {r_max}"),
            });
        }
    }
}
