//! Python bindings: matrix games, model generators with exact oracles,
//! consensus schedules, and the config-driven experiment pipeline.

use std::path::PathBuf;

use marl_core::comms::{metropolis_weights as core_metropolis, ring_of_graphs, ConsensusSchedule};
use marl_core::harness::{self, ExperimentConfig, RunRecord};
use marl_core::matrix_games::{solve_minimax, MatrixGame};
use marl_core::model::{random_garnet, random_zero_sum_game, GarnetParams, MmdpSpec, TabularModel, ZeroSumGameSpec};
use marl_core::oracles::{shapley_qstar, value_iteration_qstar, DEFAULT_MAX_SWEEPS, ORACLE_TOL};
use marl_core::MarlError;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(marl, ConfigError, PyValueError, "Invalid configuration or arguments.");
create_exception!(marl, RunError, PyRuntimeError, "Divergence, validation, or solver failure.");

fn to_py(err: MarlError) -> PyErr {
    match err.exit_code() {
        2 => ConfigError::new_err(err.to_string()),
        _ => RunError::new_err(err.to_string()),
    }
}

/// Solves a zero-sum matrix game given as a list of payoff rows.
/// Returns `(value, row_strategy, col_strategy)`.
#[pyfunction]
fn solve_matrix_game(payoff: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let game = MatrixGame::from_rows(&payoff).map_err(to_py)?;
    let sol = solve_minimax(&game).map_err(to_py)?;
    Ok((sol.value, sol.row_strategy, sol.col_strategy))
}

/// Metropolis weight matrix of an undirected edge list.
#[pyfunction]
fn metropolis_weights(edges: Vec<(usize, usize)>, n_nodes: usize) -> PyResult<Vec<Vec<f64>>> {
    if edges.iter().any(|&(i, j)| i >= n_nodes || j >= n_nodes || i == j) {
        return Err(ConfigError::new_err("edge endpoints must be distinct nodes below n_nodes"));
    }
    let c = core_metropolis(&edges, n_nodes);
    Ok((0..n_nodes).map(|i| c.row(i).iter().copied().collect()).collect())
}

/// Periodic schedule over a random spanning tree, validated on construction.
#[pyclass(name = "Schedule", frozen)]
struct PySchedule {
    inner: ConsensusSchedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (n_nodes, edges_per_round=1, seed=0))]
    fn ring(n_nodes: usize, edges_per_round: usize, seed: u64) -> PyResult<Self> {
        let graphs = ring_of_graphs(n_nodes, edges_per_round, seed).map_err(to_py)?;
        let inner = ConsensusSchedule::metropolis_periodic(graphs).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn chi(&self) -> f64 {
        self.inner.chi()
    }

    #[getter]
    fn period(&self) -> usize {
        self.inner.period()
    }

    #[getter]
    fn edges(&self) -> Vec<Vec<(usize, usize)>> {
        self.inner.graphs().graphs().to_vec()
    }

    fn matrix(&self, round: usize) -> Vec<Vec<f64>> {
        let c = self.inner.at(round);
        (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect()
    }
}

/// Cooperative networked MDP.
#[pyclass(name = "Mmdp", frozen)]
struct PyMmdp {
    inner: MmdpSpec,
}

#[pymethods]
impl PyMmdp {
    /// Random garnet: `agents` lists per-agent action counts.
    #[staticmethod]
    #[pyo3(signature = (n_states, agents, gamma, r_max=1.0, reward_noise=0.0, seed=0, branching=None))]
    fn garnet(
        n_states: usize,
        agents: Vec<usize>,
        gamma: f64,
        r_max: f64,
        reward_noise: f64,
        seed: u64,
        branching: Option<usize>,
    ) -> PyResult<Self> {
        let inner = random_garnet(&GarnetParams {
            n_states,
            branching: branching.unwrap_or(n_states.min(3)),
            agents,
            gamma,
            r_max,
            reward_noise,
            seed,
        })
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn q_max(&self) -> f64 {
        self.inner.q_max()
    }

    /// Team-average reward means, flat over `(s, a)`.
    fn average_reward(&self) -> Vec<f64> {
        self.inner.average_reward()
    }

    /// Optimal Q table, flat over `(s, a)`.
    fn optimal_q(&self) -> PyResult<Vec<f64>> {
        Ok(value_iteration_qstar(&self.inner, ORACLE_TOL, DEFAULT_MAX_SWEEPS)
            .map_err(to_py)?
            .values)
    }

    fn violations(&self) -> Vec<String> {
        self.inner.validate().iter().map(|v| v.to_string()).collect()
    }
}

/// Two-team zero-sum Markov game.
#[pyclass(name = "ZeroSumGame", frozen)]
struct PyZeroSumGame {
    inner: ZeroSumGameSpec,
}

#[pymethods]
impl PyZeroSumGame {
    #[staticmethod]
    #[pyo3(signature = (n_states, team1_agents, team2_agents, gamma, r_max=1.0, reward_noise=0.0, seed=0, branching=None))]
    #[allow(clippy::too_many_arguments)]
    fn random(
        n_states: usize,
        team1_agents: Vec<usize>,
        team2_agents: Vec<usize>,
        gamma: f64,
        r_max: f64,
        reward_noise: f64,
        seed: u64,
        branching: Option<usize>,
    ) -> PyResult<Self> {
        let inner = random_zero_sum_game(
            n_states,
            team1_agents,
            team2_agents,
            branching.unwrap_or(n_states.min(3)),
            gamma,
            r_max,
            reward_noise,
            seed,
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> (usize, usize) {
        (self.inner.n_actions(), self.inner.n_opponent_actions())
    }

    #[getter]
    fn q_max(&self) -> f64 {
        self.inner.q_max()
    }

    /// Minimax Q table, flat over `(s, a, b)`.
    fn minimax_q(&self) -> PyResult<Vec<f64>> {
        Ok(shapley_qstar(&self.inner, ORACLE_TOL, DEFAULT_MAX_SWEEPS)
            .map_err(to_py)?
            .values)
    }

    fn violations(&self) -> Vec<String> {
        self.inner.validate().iter().map(|v| v.to_string()).collect()
    }
}

fn record_dict<'py>(py: Python<'py>, r: &RunRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("run_id", &r.run_id)?;
    d.set_item("setting", r.setting.as_str())?;
    d.set_item("n_agents", r.n_agents)?;
    d.set_item("length", r.length)?;
    d.set_item("rounds", r.rounds)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("seed", r.seed)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("chi", r.chi)?;
    d.set_item("q_max", r.q_max)?;
    d.set_item("q_error", r.q_error)?;
    d.set_item("q_error_rel", r.q_error_rel)?;
    d.set_item("q_tilde_error", r.q_tilde_error)?;
    d.set_item("eps_bar_max", r.eps_bar_max)?;
    d.set_item("tracker_gap_max", r.tracker_gap_max)?;
    d.set_item("design_rank", r.design_rank)?;
    d.set_item("design_full_rank", r.design_full_rank)?;
    d.set_item("input_hash", &r.input_hash)?;
    Ok(d)
}

/// Parsed experiment configuration.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: harness::parse_config(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: harness::load_config(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.points().len()
    }

    fn validate(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        let config = &self.inner;
        py.detach(|| harness::validate_experiment(config))
            .map(|r| r.lines)
            .map_err(to_py)
    }

    /// Runs the sweep (or only the base point) into `out_dir` and returns
    /// one dict per run.
    #[pyo3(signature = (out_dir, single=false))]
    fn run<'py>(&self, py: Python<'py>, out_dir: PathBuf, single: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let config = &self.inner;
        let summary = py
            .detach(|| {
                if single {
                    harness::run_single(config, &out_dir)
                } else {
                    harness::run_experiment(config, &out_dir)
                }
            })
            .map_err(to_py)?;
        summary.records.iter().map(|r| record_dict(py, r)).collect()
    }
}

/// Writes long-format and per-series plot data; returns the written paths.
#[pyfunction]
#[pyo3(signature = (results_csv, x, y, out_dir, group=None))]
fn emit_plot_data(
    results_csv: PathBuf,
    x: &str,
    y: &str,
    out_dir: PathBuf,
    group: Option<&str>,
) -> PyResult<(PathBuf, Vec<PathBuf>)> {
    let out = harness::emit_plot_data(&results_csv, x, y, group, &out_dir).map_err(to_py)?;
    Ok((out.long_csv, out.series))
}

#[pymodule]
pub fn marl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("RunError", m.py().get_type::<RunError>())?;
    m.add_function(wrap_pyfunction!(solve_matrix_game, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis_weights, m)?)?;
    m.add_function(wrap_pyfunction!(emit_plot_data, m)?)?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyMmdp>()?;
    m.add_class::<PyZeroSumGame>()?;
    m.add_class::<PyExperiment>()?;
    Ok(())
}
