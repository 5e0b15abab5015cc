//! Experiment configuration, seeded sweeps, and CSV output.
//!
//! A run directory holds `results.csv` (one canonical row per sweep point),
//! `timing.csv` (wall times, kept apart so results stay byte-reproducible),
//! `manifest.toml`, and one `runs/<id>/` directory per point with the trace,
//! final parameters, and policy.

mod config;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    load_config, parse_config, DataConfig, DataKind, ExperimentConfig, FeatureConfig, Fixture,
    FixtureConfig, ModeConfig, RunConfig, ScheduleConfig, Setting, SweepConfig, SweepPoint,
};
pub use plot::{emit_plot_data, PlotOutput};

use crate::comms::ConsensusSchedule;
use crate::error::{MarlError, Result};
use crate::features::{design_matrix_stats, DesignStats, FeatureMap, QVector};
use crate::fqi::{average_policy, fqi_run, FqiOutput, MixturePolicy, TieBreak};
use crate::model::{sample_trajectory, Batch, BehaviorPolicy, Violation};
use crate::oracles::{
    evaluate_policy_coop, evaluate_policy_compet, shapley_qstar, value_iteration_qstar,
    weighted_norm, EvalDistribution, TabularQ, DEFAULT_MAX_SWEEPS,
};

/// Environment variable naming the directory that experiment outputs go under.
pub const OUTPUT_ROOT_VAR: &str = "MARL_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("marl-output"))
}

/// Everything that determines a run's output; hashed into `input_hash`.
#[derive(Debug, Serialize)]
struct RunInputs<'a> {
    version: &'a str,
    setting: Setting,
    fixture: &'a FixtureConfig,
    features: &'a FeatureConfig,
    schedule: &'a ScheduleConfig,
    data: &'a DataConfig,
    run: &'a RunConfig,
    point: SweepPoint,
    trajectory_seed: u64,
    reward_seed: u64,
}

/// SHA-256 of `"blob <len>\0<content>"`.
pub fn content_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hex::encode(hasher.finalize())
}

fn input_hash(config: &ExperimentConfig, point: &SweepPoint) -> Result<String> {
    let inputs = RunInputs {
        version: env!("CARGO_PKG_VERSION"),
        setting: config.setting,
        fixture: &config.fixture,
        features: &config.features,
        schedule: &config.schedule,
        data: &config.data,
        run: &config.run,
        point: *point,
        trajectory_seed: point.trajectory_seed(config),
        reward_seed: point.reward_seed(config),
    };
    let text = toml::to_string(&inputs).map_err(|e| MarlError::Config(e.to_string()))?;
    Ok(content_hash(text.as_bytes()))
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub setting: Setting,
    pub mode: ModeConfig,
    pub n_agents: usize,
    pub length: usize,
    pub rounds: usize,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub trajectory_seed: u64,
    pub reward_seed: u64,
    pub alpha: f64,
    pub chi: f64,
    pub q_max: f64,
    /// `||Q* - Q_{pi_K}||_mu` under uniform `mu`.
    pub q_error: f64,
    pub q_error_rel: f64,
    /// `max_i ||Q~_K^i - Q*||_inf` on clipped predictions.
    pub q_tilde_error: f64,
    pub eps_bar_max: f64,
    pub eps_bar_final: f64,
    pub bellman_residual_final: f64,
    pub tracker_gap_max: f64,
    pub design_rank: usize,
    pub design_full_rank: bool,
    pub input_hash: String,
    pub wall_time_secs: f64,
}

pub const RESULT_COLUMNS: [&str; 23] = [
    "run_id",
    "setting",
    "mode",
    "n_agents",
    "length",
    "rounds",
    "iterations",
    "seed",
    "trajectory_seed",
    "reward_seed",
    "alpha",
    "chi",
    "q_max",
    "q_error",
    "q_error_rel",
    "q_tilde_error",
    "eps_bar_max",
    "eps_bar_final",
    "bellman_residual_final",
    "tracker_gap_max",
    "design_rank",
    "design_full_rank",
    "input_hash",
];

impl RunRecord {
    fn csv_row(&self) -> Vec<String> {
        let e = |v: f64| format!("{v:.10e}");
        vec![
            self.run_id.clone(),
            self.setting.as_str().into(),
            match self.mode {
                ModeConfig::Decentralized => "decentralized".into(),
                ModeConfig::CentralizedExact => "centralized_exact".into(),
            },
            self.n_agents.to_string(),
            self.length.to_string(),
            self.rounds.to_string(),
            self.iterations.to_string(),
            self.seed.map_or_else(String::new, |s| s.to_string()),
            self.trajectory_seed.to_string(),
            self.reward_seed.to_string(),
            e(self.alpha),
            e(self.chi),
            e(self.q_max),
            e(self.q_error),
            e(self.q_error_rel),
            e(self.q_tilde_error),
            e(self.eps_bar_max),
            e(self.eps_bar_final),
            e(self.bellman_residual_final),
            e(self.tracker_gap_max),
            self.design_rank.to_string(),
            self.design_full_rank.to_string(),
            self.input_hash.clone(),
        ]
    }
}

/// Full output of one sweep point.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub output: FqiOutput,
    pub qstar: TabularQ,
    pub q_policy: TabularQ,
}

/// Exact optimal (or minimax) Q-function of a fixture.
pub fn reference_q(fixture: &Fixture, tol: f64) -> Result<TabularQ> {
    match fixture {
        Fixture::Coop(spec) => value_iteration_qstar(spec, tol, DEFAULT_MAX_SWEEPS),
        Fixture::Game(game) => shapley_qstar(game, tol, DEFAULT_MAX_SWEEPS),
    }
}

/// `Q_pi` for a policy of the learning team.
pub fn evaluate_policy(fixture: &Fixture, policy: &MixturePolicy, tol: f64) -> Result<TabularQ> {
    match fixture {
        Fixture::Coop(spec) => evaluate_policy_coop(spec, policy),
        Fixture::Game(game) => evaluate_policy_compet(game, policy, tol, DEFAULT_MAX_SWEEPS),
    }
}

/// Builds the regression batch of a sweep point.
pub fn build_batch(config: &ExperimentConfig, fixture: &Fixture, point: &SweepPoint) -> Result<Batch> {
    let model = fixture.model();
    Ok(match config.data.kind {
        DataKind::Exhaustive => Batch::exhaustive(model),
        DataKind::Trajectory => Batch::from_trajectory(&sample_trajectory(
            model,
            &BehaviorPolicy::Uniform,
            point.length,
            config.data.burn_in,
            point.trajectory_seed(config),
        )?),
    })
}

/// Recomputes `||Q* - Q_{pi_K}||_mu` from stored final parameters.
pub fn recompute_q_error(config: &ExperimentConfig, point: &SweepPoint, qvector: &QVector) -> Result<f64> {
    let fixture = config.build_fixture(point.n_agents)?;
    let model = fixture.model();
    let features = config.build_features(model)?;
    let tie = config.run.tie_seed.map_or(TieBreak::Lowest, TieBreak::Seeded);
    let policy = average_policy(qvector, &features, model.q_max(), model.is_game(), tie)?;
    let qstar = reference_q(&fixture, config.run.eval_tol)?;
    let q_policy = evaluate_policy(&fixture, &policy, config.run.eval_tol)?;
    weighted_norm(&qstar.values, &q_policy.values, &EvalDistribution::uniform(model.n_cells()))
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Structural checks of a configuration, without running FQI.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub lines: Vec<String>,
}

struct Prepared {
    fixture: Fixture,
    features: FeatureMap,
    schedule: ConsensusSchedule,
}

fn prepare(config: &ExperimentConfig, n_agents: Option<usize>) -> Result<Prepared> {
    let fixture = config.build_fixture(n_agents)?;
    let violations = fixture.model().validate();
    if !violations.is_empty() {
        return Err(MarlError::Validation(format_violations(&violations)));
    }
    let features = config.build_features(fixture.model())?;
    let schedule = config.build_schedule(fixture.n_agents())?;
    Ok(Prepared {
        fixture,
        features,
        schedule,
    })
}

/// Validates every fixture and schedule of the sweep and reports the design
/// rank of every regression batch.
pub fn validate_experiment(config: &ExperimentConfig) -> Result<ValidationReport> {
    let mut lines = Vec::new();
    let mut prepared: BTreeMap<Option<usize>, Prepared> = BTreeMap::new();
    for point in config.points() {
        if !prepared.contains_key(&point.n_agents) {
            let p = prepare(config, point.n_agents)?;
            let model = p.fixture.model();
            lines.push(format!(
                "fixture: {} states, {} joint actions, {} opponent actions, {} agents, gamma {}, Q_max {:.4}",
                model.n_states(),
                model.n_actions(),
                model.n_opponent_actions(),
                model.n_agents(),
                model.gamma(),
                model.q_max()
            ));
            lines.push(format!(
                "schedule: {} nodes, period {}, window {}, chi {:.6}",
                p.schedule.n_nodes(),
                p.schedule.period(),
                p.schedule.window_b(),
                p.schedule.chi()
            ));
            prepared.insert(point.n_agents, p);
        }
        let p = &prepared[&point.n_agents];
        let batch = build_batch(config, &p.fixture, &point)?;
        let stats = design_matrix_stats(&batch, &p.features);
        let id = point.run_id(p.fixture.n_agents());
        lines.push(format!(
            "{id}: design rank {}/{}, eigenvalues [{:.3e}, {:.3e}]",
            stats.rank, stats.dim, stats.min_eigenvalue, stats.max_eigenvalue
        ));
        if !stats.full_rank && config.run.strict_rank {
            return Err(MarlError::RankDeficient {
                rank: stats.rank,
                dim: stats.dim,
            });
        }
    }
    Ok(ValidationReport { lines })
}

fn run_prepared(config: &ExperimentConfig, p: &Prepared, point: &SweepPoint) -> Result<RunOutcome> {
    let started = Instant::now();
    let model = p.fixture.model();
    let batch = build_batch(config, &p.fixture, point)?;
    let fqi = config.fqi_config(point);
    let output = fqi_run(model, &p.features, &batch, &p.schedule, &fqi)?;
    let qstar = reference_q(&p.fixture, config.run.eval_tol)?;
    let q_policy = evaluate_policy(&p.fixture, &output.policy, config.run.eval_tol)?;
    let mu = EvalDistribution::uniform(model.n_cells());
    let q_error = weighted_norm(&qstar.values, &q_policy.values, &mu)?;
    let q_tilde_error = output
        .qvector
        .tables(&p.features, model.q_max())?
        .iter()
        .map(|t| qstar.sup_distance(t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let design: &DesignStats = &output.design;
    let last = output.trace.records.last();
    let record = RunRecord {
        run_id: point.run_id(model.n_agents()),
        setting: config.setting,
        mode: config.run.mode,
        n_agents: model.n_agents(),
        length: point.length,
        rounds: point.rounds,
        iterations: point.iterations,
        seed: point.seed,
        trajectory_seed: point.trajectory_seed(config),
        reward_seed: fqi.reward_seed,
        alpha: output.alpha,
        chi: p.schedule.chi(),
        q_max: model.q_max(),
        q_error,
        q_error_rel: q_error / model.q_max(),
        q_tilde_error,
        eps_bar_max: output.trace.max_eps_bar(),
        eps_bar_final: output.trace.final_eps_bar(),
        bellman_residual_final: last.map_or(0.0, |r| r.bellman_residual),
        tracker_gap_max: output
            .trace
            .records
            .iter()
            .map(|r| r.tracker_gap)
            .fold(0.0, f64::max),
        design_rank: design.rank,
        design_full_rank: design.full_rank,
        input_hash: input_hash(config, point)?,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        record,
        output,
        qstar,
        q_policy,
    })
}

/// Runs one sweep point without writing anything.
pub fn run_point(config: &ExperimentConfig, point: &SweepPoint) -> Result<RunOutcome> {
    run_prepared(config, &prepare(config, point.n_agents)?, point)
}

#[derive(Debug, Serialize)]
struct ManifestRun {
    run_id: String,
    n_agents: usize,
    length: usize,
    rounds: usize,
    iterations: usize,
    seed: Option<u64>,
    trajectory_seed: u64,
    reward_seed: u64,
    input_hash: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    name: String,
    setting: Setting,
    code_version: String,
    config_hash: String,
    runs: Vec<ManifestRun>,
}

/// Outputs of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub results_csv: PathBuf,
    pub records: Vec<RunRecord>,
}

fn write_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_outputs(
    config: &ExperimentConfig,
    out_dir: &Path,
    outcomes: &[(SweepPoint, RunOutcome)],
) -> Result<ExperimentSummary> {
    fs::create_dir_all(out_dir.join("runs"))?;
    let results_csv = out_dir.join("results.csv");
    write_file(&results_csv, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(RESULT_COLUMNS)?;
        for (_, o) in outcomes {
            w.write_record(o.record.csv_row())?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_file(&out_dir.join("timing.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["run_id", "wall_time_secs", "iteration_secs_total"])?;
        for (_, o) in outcomes {
            let inner: f64 = o.output.trace.records.iter().map(|r| r.wall_time_secs).sum();
            w.write_record([
                o.record.run_id.clone(),
                format!("{:.6}", o.record.wall_time_secs),
                format!("{inner:.6}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for (_, o) in outcomes {
        let dir = out_dir.join("runs").join(&o.record.run_id);
        fs::create_dir_all(&dir)?;
        write_file(&dir.join("trace.csv"), |b| o.output.trace.write_csv(b))?;
        write_file(&dir.join("theta.csv"), |b| o.output.qvector.write_csv(b))?;
        write_file(&dir.join("policy.csv"), |b| o.output.policy.write_csv(b))?;
        write_file(&dir.join("q_policy.csv"), |b| o.q_policy.write_csv(b))?;
    }
    let config_text = toml::to_string(config).map_err(|e| MarlError::Config(e.to_string()))?;
    let manifest = Manifest {
        name: config.name.clone(),
        setting: config.setting,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: content_hash(config_text.as_bytes()),
        runs: outcomes
            .iter()
            .map(|(p, o)| ManifestRun {
                run_id: o.record.run_id.clone(),
                n_agents: o.record.n_agents,
                length: o.record.length,
                rounds: p.rounds,
                iterations: p.iterations,
                seed: p.seed,
                trajectory_seed: o.record.trajectory_seed,
                reward_seed: o.record.reward_seed,
                input_hash: o.record.input_hash.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| MarlError::Config(e.to_string()))?;
    fs::write(out_dir.join("manifest.toml"), text)?;
    fs::write(out_dir.join("config.toml"), config_text)?;
    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        results_csv,
        records: outcomes.iter().map(|(_, o)| o.record.clone()).collect(),
    })
}

/// Runs the given points (in parallel) and writes the output directory.
/// Every fixture and schedule is built and validated before any run starts.
pub fn run_points(config: &ExperimentConfig, points: &[SweepPoint], out_dir: &Path) -> Result<ExperimentSummary> {
    let mut prepared: BTreeMap<Option<usize>, Prepared> = BTreeMap::new();
    for p in points {
        if !prepared.contains_key(&p.n_agents) {
            prepared.insert(p.n_agents, prepare(config, p.n_agents)?);
        }
    }
    let results: Vec<Result<RunOutcome>> = points
        .par_iter()
        .map(|p| run_prepared(config, &prepared[&p.n_agents], p))
        .collect();
    let mut outcomes = Vec::with_capacity(points.len());
    for (p, r) in points.iter().zip(results) {
        outcomes.push((*p, r?));
    }
    let mut ids: Vec<&str> = outcomes.iter().map(|(_, o)| o.record.run_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(MarlError::Config("sweep contains duplicate points".into()));
    }
    write_outputs(config, out_dir, &outcomes)
}

/// Runs the full sweep.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    run_points(config, &config.points(), out_dir)
}

/// Runs only the base point (sweep axes ignored).
pub fn run_single(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    run_points(config, &[config.base_point()], out_dir)
}
