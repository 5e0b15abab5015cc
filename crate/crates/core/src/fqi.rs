//! Decentralized fitted Q-iteration: the cooperative driver (targets from the
//! greedy max) and the two-team competitive driver (targets from the value of
//! a per-state matrix game), each fitting through DIGing or, in
//! centralized-exact mode, through the exact least-squares solution.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::comms::ConsensusSchedule;
use crate::consensus_opt::{
    centralized_lsq, diging_run, measure_disagreement, LocalObjective, SharedDesign,
};
use crate::error::{MarlError, Result};
use crate::features::{design_matrix_stats, DesignStats, FeatureMap, LinearQ, QVector};
use crate::matrix_games::{solve_minimax, MatrixGame};
use crate::model::{derive_seed, Batch, RewardDraw, TabularModel, Transition, ZeroSumGameSpec};
use crate::oracles::average_bellman;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqiMode {
    /// Each iteration's fit is solved by `rounds` DIGing steps.
    Decentralized,
    /// Each iteration's fit is the exact minimizer, shared by every agent.
    CentralizedExact,
}

/// How ties in the greedy argmax are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    Lowest,
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqiConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    /// DIGing rounds `L` per iteration.
    pub rounds: usize,
    /// DIGing stepsize; `None` uses `alpha_scale` times
    /// [`SharedDesign::default_stepsize`].
    pub alpha: Option<f64>,
    pub alpha_scale: f64,
    pub mode: FqiMode,
    pub reward_seed: u64,
    /// Reuse iteration 0's reward draw at every iteration.
    pub frozen_rewards: bool,
    /// Abort on a rank-deficient design matrix instead of warning.
    pub strict_rank: bool,
    pub tie_break: TieBreak,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            rounds: 2000,
            alpha: None,
            alpha_scale: 1.0,
            mode: FqiMode::Decentralized,
            reward_seed: 0,
            frozen_rewards: false,
            strict_rank: false,
            tie_break: TieBreak::Lowest,
        }
    }
}

/// Per-state distribution over the learning team's joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `[s][a]`.
    pub probs: Vec<f64>,
}

impl MixturePolicy {
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Uniform average of component policies with equal shapes.
    pub fn average(components: &[MixturePolicy]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| MarlError::Argument("cannot average zero policies".into()))?;
        if components
            .iter()
            .any(|c| c.n_states != first.n_states || c.n_actions != first.n_actions)
        {
            return Err(MarlError::Argument("component policies differ in shape".into()));
        }
        let n = components.len() as f64;
        let probs = (0..first.probs.len())
            .map(|k| components.iter().map(|c| c.probs[k]).sum::<f64>() / n)
            .collect();
        Ok(Self {
            n_states: first.n_states,
            n_actions: first.n_actions,
            probs,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "a", "prob"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                w.write_record([s.to_string(), a.to_string(), format!("{:.17e}", self.prob(s, a))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One outer iteration's diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Per-agent sup gap to the exact fit over the dataset cells.
    pub eps: Vec<f64>,
    pub eps_bar: f64,
    /// Same gap with the sup over every cell.
    pub eps_bar_all_cells: f64,
    /// Averaged least-squares objective at the exact fit.
    pub fit_residual: f64,
    /// `|| T~ Q_{k-1} - Q~_k ||` under the empirical measure of the batch.
    pub bellman_residual: f64,
    /// Largest tracker-conservation gap seen in this iteration's DIGing run.
    pub tracker_gap: f64,
    /// Fitted geometric rate of the DIGing residual, NaN in exact mode.
    pub diging_rate: f64,
    pub singular: bool,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FqiTrace {
    pub records: Vec<IterationRecord>,
}

impl FqiTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `max_k eps_bar_k`.
    pub fn max_eps_bar(&self) -> f64 {
        self.records.iter().map(|r| r.eps_bar).fold(0.0, f64::max)
    }

    pub fn final_eps_bar(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.eps_bar)
    }

    /// Writes every column except wall time, so the output is reproducible.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.records.first().map_or(0, |r| r.eps.len());
        let mut header = vec![
            "iteration".to_string(),
            "eps_bar".into(),
            "eps_bar_all_cells".into(),
            "fit_residual".into(),
            "bellman_residual".into(),
            "tracker_gap".into(),
            "diging_rate".into(),
            "singular".into(),
        ];
        header.extend((0..n).map(|i| format!("eps_{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                format!("{:.10e}", r.eps_bar),
                format!("{:.10e}", r.eps_bar_all_cells),
                format!("{:.10e}", r.fit_residual),
                format!("{:.10e}", r.bellman_residual),
                format!("{:.10e}", r.tracker_gap),
                format!("{:.10e}", r.diging_rate),
                r.singular.to_string(),
            ];
            row.extend(r.eps.iter().map(|e| format!("{e:.10e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FqiOutput {
    pub qvector: QVector,
    pub policy: MixturePolicy,
    pub trace: FqiTrace,
    /// Exact fit of the final iteration.
    pub theta_star: DVector<f64>,
    pub design: DesignStats,
    /// DIGing stepsize used by every iteration.
    pub alpha: f64,
}

fn check_alignment(tuples: &[Transition], rewards: &RewardDraw, n_agents: usize) -> Result<()> {
    if rewards.rewards.len() != n_agents {
        return Err(MarlError::Dimension {
            expected: n_agents,
            got: rewards.rewards.len(),
            context: "reward draw agents",
        });
    }
    if let Some(bad) = rewards.rewards.iter().find(|r| r.len() != tuples.len()) {
        return Err(MarlError::Dimension {
            expected: tuples.len(),
            got: bad.len(),
            context: "reward draw vs transitions",
        });
    }
    Ok(())
}

fn check_states(tuples: &[Transition], features: &FeatureMap) -> Result<()> {
    if let Some(tr) = tuples.iter().find(|tr| tr.next >= features.n_states()) {
        return Err(MarlError::Argument(format!("next state in {tr:?} outside the feature domain")));
    }
    Ok(())
}

/// `Y_i,t = r_i,t + gamma * max_a Q_i(s_{t+1}, a)` on clipped predictions.
pub fn coop_targets(
    qvector: &QVector,
    features: &FeatureMap,
    tuples: &[Transition],
    rewards: &RewardDraw,
    gamma: f64,
    q_max: f64,
) -> Result<Vec<Vec<f64>>> {
    check_alignment(tuples, rewards, qvector.len())?;
    check_states(tuples, features)?;
    let (n_s, n_a) = (features.n_states(), features.n_actions());
    let tables = qvector.tables(features, q_max)?;
    Ok(tables
        .iter()
        .zip(&rewards.rewards)
        .map(|(table, r)| {
            let best: Vec<f64> = (0..n_s)
                .map(|s| {
                    (0..n_a)
                        .map(|a| table[features.cell(s, a, 0)])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            tuples
                .iter()
                .zip(r)
                .map(|(tr, &rt)| rt + gamma * best[tr.next])
                .collect()
        })
        .collect())
}

/// The matrix game `Q(s, ., .)` read from a table over `(s, a, b)` cells.
pub fn state_game(table: &[f64], features: &FeatureMap, s: usize) -> Result<MatrixGame> {
    let (n_a, n_b) = (features.n_actions(), features.n_opponent_actions());
    let start = features.cell(s, 0, 0);
    MatrixGame::new(n_a, n_b, table[start..start + n_a * n_b].to_vec())
}

/// `Y_i,t = r^{1,i}_t + gamma * val(Q_i(s_{t+1}, ., .))`. The game at a next
/// state depends only on the agent and that state, so it is solved once per
/// `(agent, state)` and shared by every sample landing there.
pub fn compet_targets(
    qvector: &QVector,
    features: &FeatureMap,
    tuples: &[Transition],
    rewards: &RewardDraw,
    gamma: f64,
    q_max: f64,
) -> Result<Vec<Vec<f64>>> {
    check_alignment(tuples, rewards, qvector.len())?;
    check_states(tuples, features)?;
    let n_s = features.n_states();
    let tables = qvector.tables(features, q_max)?;
    let mut out = Vec::with_capacity(tables.len());
    for (agent, (table, r)) in tables.iter().zip(&rewards.rewards).enumerate() {
        let mut values: Vec<Option<f64>> = vec![None; n_s];
        let mut targets = Vec::with_capacity(tuples.len());
        for (t, (tr, &rt)) in tuples.iter().zip(r).enumerate() {
            let v = match values[tr.next] {
                Some(v) => v,
                None => {
                    let v = state_game(table, features, tr.next)
                        .and_then(|g| solve_minimax(&g))
                        .map_err(|e| MarlError::GameSolve {
                            agent,
                            sample: t,
                            source: Box::new(e),
                        })?
                        .value;
                    values[tr.next] = Some(v);
                    v
                }
            };
            targets.push(rt + gamma * v);
        }
        out.push(targets);
    }
    Ok(out)
}

/// Per-state argmax over joint actions of clipped predictions.
pub fn greedy_policy(linear_q: &LinearQ, features: &FeatureMap, tie_break: TieBreak) -> Result<Vec<usize>> {
    if features.n_opponent_actions() != 1 {
        return Err(MarlError::Argument(
            "greedy policy is defined for cooperative feature maps".into(),
        ));
    }
    let table = linear_q.table(features)?;
    let n_a = features.n_actions();
    Ok((0..features.n_states())
        .map(|s| {
            let row = &table[s * n_a..(s + 1) * n_a];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..n_a).filter(|&a| row[a] == best).collect();
            match tie_break {
                TieBreak::Lowest => ties[0],
                TieBreak::Seeded(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
                    ties[rng.random_range(0..ties.len())]
                }
            }
        })
        .collect())
}

/// Equilibrium (maximin) strategy of the row team at every state.
pub fn equilibrium_policy(linear_q: &LinearQ, features: &FeatureMap) -> Result<MixturePolicy> {
    let table = linear_q.table(features)?;
    let n_a = features.n_actions();
    let mut probs = Vec::with_capacity(features.n_states() * n_a);
    for s in 0..features.n_states() {
        probs.extend(solve_minimax(&state_game(&table, features, s)?)?.row_strategy);
    }
    Ok(MixturePolicy {
        n_states: features.n_states(),
        n_actions: n_a,
        probs,
    })
}

/// Uniform mixture of the agents' greedy (cooperative) or equilibrium
/// (competitive) policies.
pub fn average_policy(
    qvector: &QVector,
    features: &FeatureMap,
    q_max: f64,
    competitive: bool,
    tie_break: TieBreak,
) -> Result<MixturePolicy> {
    let components = (0..qvector.len())
        .map(|i| {
            let q = qvector.agent(i, q_max);
            if competitive {
                equilibrium_policy(&q, features)
            } else {
                greedy_policy(&q, features, tie_break)
                    .map(|acts| MixturePolicy::deterministic(&acts, features.n_actions()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    MixturePolicy::average(&components)
}

fn iteration_seed(config: &FqiConfig, k: usize) -> u64 {
    let stream = if config.frozen_rewards { 0 } else { k as u64 };
    derive_seed(config.reward_seed, stream)
}

/// Runs `K` outer iterations from `Q~_0 = 0`: resample rewards, build local
/// targets, fit (DIGing or exact), record the one-step computation error.
/// Games use competitive targets and equilibrium policies for the maximizer.
pub fn fqi_run<M: TabularModel + ?Sized>(
    model: &M,
    features: &FeatureMap,
    batch: &Batch,
    schedule: &ConsensusSchedule,
    config: &FqiConfig,
) -> Result<FqiOutput> {
    if config.iterations == 0 {
        return Err(MarlError::Argument("need at least one outer iteration".into()));
    }
    features.check_model(model)?;
    let n = model.n_agents();
    if config.mode == FqiMode::Decentralized && schedule.n_nodes() != n {
        return Err(MarlError::Dimension {
            expected: n,
            got: schedule.n_nodes(),
            context: "consensus schedule nodes vs agents",
        });
    }
    let design_stats = design_matrix_stats(batch, features);
    if !design_stats.full_rank {
        if config.strict_rank {
            return Err(MarlError::RankDeficient {
                rank: design_stats.rank,
                dim: design_stats.dim,
            });
        }
        log::warn!(
            "design matrix rank {} < {}; fits fall back to minimum-norm solutions",
            design_stats.rank,
            design_stats.dim
        );
    }
    let design = SharedDesign::new(batch, features)?;
    let alpha = config
        .alpha
        .unwrap_or_else(|| config.alpha_scale * design.default_stepsize());
    let (gamma, q_max) = (model.gamma(), model.q_max());

    let mut qvector = QVector::zeros(n, features.dim());
    let mut trace = FqiTrace::default();
    let mut theta_star = DVector::zeros(features.dim());
    for k in 0..config.iterations {
        let started = Instant::now();
        let step = || -> Result<(QVector, IterationRecord, DVector<f64>)> {
            let rewards = model.sample_rewards(&batch.tuples, iteration_seed(config, k))?;
            let targets = if model.is_game() {
                compet_targets(&qvector, features, &batch.tuples, &rewards, gamma, q_max)?
            } else {
                coop_targets(&qvector, features, &batch.tuples, &rewards, gamma, q_max)?
            };
            let objectives = targets
                .into_iter()
                .map(|y| LocalObjective::new(design.clone(), y))
                .collect::<Result<Vec<_>>>()?;
            let exact = centralized_lsq(&objectives)?;
            let (next, tracker_gap, rate) = match config.mode {
                FqiMode::CentralizedExact => (QVector::consensual(&exact.theta, n), 0.0, f64::NAN),
                FqiMode::Decentralized => {
                    let (qv, report) = diging_run(&objectives, schedule, alpha, config.rounds)?;
                    let gap = report.tracker_gap.iter().cloned().fold(0.0, f64::max);
                    (qv, gap, report.rate)
                }
            };
            let gap = measure_disagreement(&next, &exact.theta, &design, q_max)?;
            let fit_residual =
                objectives.iter().map(|o| o.value(&exact.theta)).sum::<f64>() / n as f64;

            let prev_tables = qvector.tables(features, q_max)?;
            let backup = average_bellman(model, &prev_tables, features)?;
            let fitted = features.predict_table(&exact.theta, q_max)?;
            let bellman_residual = design
                .sample_cells()
                .iter()
                .zip(design.weights())
                .map(|(&c, &w)| w * (backup[c] - fitted[c]).powi(2))
                .sum::<f64>()
                .sqrt();
            let record = IterationRecord {
                iteration: k,
                eps_bar: gap.rms,
                eps_bar_all_cells: gap.rms_all_cells,
                eps: gap.per_agent,
                fit_residual,
                bellman_residual,
                tracker_gap,
                diging_rate: rate,
                singular: exact.singular,
                wall_time_secs: 0.0,
            };
            Ok((next, record, exact.theta))
        };
        let (next, mut record, star) = step().map_err(|e| e.at_iteration(k))?;
        record.wall_time_secs = started.elapsed().as_secs_f64();
        qvector = next;
        theta_star = star;
        trace.records.push(record);
    }
    let policy = average_policy(&qvector, features, q_max, model.is_game(), config.tie_break)?;
    Ok(FqiOutput {
        qvector,
        policy,
        trace,
        theta_star,
        design: design_stats,
        alpha,
    })
}

/// Trains Team 2 by exchanging the teams' roles; the returned policy is over
/// Team 2's joint actions and maximizes Team 2's averaged return.
pub fn fqi_run_team2(
    game: &ZeroSumGameSpec,
    features: &FeatureMap,
    batch: &Batch,
    schedule: &ConsensusSchedule,
    config: &FqiConfig,
) -> Result<FqiOutput> {
    let swapped = game.swap_teams();
    if features.n_actions() != swapped.n_actions()
        || features.n_opponent_actions() != swapped.n_opponent_actions()
    {
        return Err(MarlError::Argument(
            "Team 2 features must be indexed (s, b, a) with Team 2's actions first".into(),
        ));
    }
    fqi_run(&swapped, features, &batch.swap_roles(), schedule, config)
}
