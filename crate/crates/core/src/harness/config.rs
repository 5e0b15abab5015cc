use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::comms::{ring_of_graphs, ConsensusSchedule, Edge, GraphSchedule};
use crate::error::{MarlError, Result};
use crate::features::FeatureMap;
use crate::fqi::{FqiConfig, FqiMode, TieBreak};
use crate::model::{
    chain, derive_seed, gridworld, random_garnet, random_zero_sum_game, GarnetParams, MmdpSpec,
    TabularModel, ZeroSumGameSpec, DEFAULT_BURN_IN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Coop,
    Compet,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Coop => "coop",
            Setting::Compet => "compet",
        }
    }
}

/// Model source: a named generator or inline tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureConfig {
    Garnet {
        n_states: usize,
        agents: Vec<usize>,
        branching: Option<usize>,
        gamma: f64,
        r_max: f64,
        #[serde(default)]
        reward_noise: f64,
        #[serde(default)]
        seed: u64,
    },
    ZeroSum {
        n_states: usize,
        team1_agents: Vec<usize>,
        team2_agents: Vec<usize>,
        branching: Option<usize>,
        gamma: f64,
        r_max: f64,
        #[serde(default)]
        reward_noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Chain {
        n_states: usize,
        n_agents: usize,
        #[serde(default)]
        slip: f64,
        gamma: f64,
        r_max: f64,
        #[serde(default)]
        reward_noise: f64,
    },
    Gridworld {
        width: usize,
        height: usize,
        n_agents: usize,
        #[serde(default)]
        slip: f64,
        gamma: f64,
        r_max: f64,
        #[serde(default)]
        reward_noise: f64,
    },
    Mmdp {
        n_states: usize,
        agents: Vec<usize>,
        /// Flattened `[s][a][s']`.
        transition: Vec<f64>,
        reward_mean: Vec<Vec<f64>>,
        #[serde(default)]
        reward_noise: f64,
        gamma: f64,
        r_max: f64,
    },
    Game {
        n_states: usize,
        team1_agents: Vec<usize>,
        team2_agents: Vec<usize>,
        /// Flattened `[s][a][b][s']`.
        transition: Vec<f64>,
        team1_reward_mean: Vec<Vec<f64>>,
        team2_reward_mean: Vec<Vec<f64>>,
        #[serde(default)]
        reward_noise: f64,
        gamma: f64,
        r_max: f64,
    },
}

impl FixtureConfig {
    fn discount_and_bound(&self) -> (f64, f64) {
        match self {
            FixtureConfig::Garnet { gamma, r_max, .. }
            | FixtureConfig::ZeroSum { gamma, r_max, .. }
            | FixtureConfig::Chain { gamma, r_max, .. }
            | FixtureConfig::Gridworld { gamma, r_max, .. }
            | FixtureConfig::Mmdp { gamma, r_max, .. }
            | FixtureConfig::Game { gamma, r_max, .. } => (*gamma, *r_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    #[default]
    OneHot,
    RadialBasis { centers: Vec<f64>, width: f64 },
    /// One row per cell.
    Custom { table: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Random spanning tree split into rounds of `edges_per_round` edges.
    Ring {
        #[serde(default = "one")]
        edges_per_round: usize,
        #[serde(default)]
        seed: u64,
        window: Option<usize>,
    },
    Complete,
    Static { edges: Vec<Edge> },
    Explicit {
        rounds: Vec<Vec<Edge>>,
        window: Option<usize>,
    },
}

fn one() -> usize {
    1
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::Ring {
            edges_per_round: 1,
            seed: 0,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Trajectory,
    /// Every `(s, a, b, s')` weighted by its transition probability.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub kind: DataKind,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_length() -> usize {
    20_000
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Trajectory,
            length: default_length(),
            burn_in: default_burn_in(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Decentralized,
    CentralizedExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub alpha: Option<f64>,
    #[serde(default = "default_alpha_scale")]
    pub alpha_scale: f64,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub reward_seed: u64,
    #[serde(default)]
    pub frozen_rewards: bool,
    #[serde(default)]
    pub strict_rank: bool,
    /// Seeded random tie-breaking in greedy policies; lowest index when absent.
    pub tie_seed: Option<u64>,
    /// Zero the fixture's reward noise.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_eval_tol")]
    pub eval_tol: f64,
}

fn default_iterations() -> usize {
    30
}

fn default_rounds() -> usize {
    2000
}

fn default_alpha_scale() -> f64 {
    1.0
}

fn default_eval_tol() -> f64 {
    1e-10
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            rounds: default_rounds(),
            alpha: None,
            alpha_scale: default_alpha_scale(),
            mode: ModeConfig::Decentralized,
            reward_seed: 0,
            frozen_rewards: false,
            strict_rank: false,
            tie_seed: None,
            noiseless: false,
            eval_tol: default_eval_tol(),
        }
    }
}

/// Sweep axes; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub iterations: Vec<usize>,
    #[serde(default)]
    pub length: Vec<usize>,
    #[serde(default)]
    pub rounds: Vec<usize>,
    #[serde(default)]
    pub agents: Vec<usize>,
    /// Each seed derives the trajectory and reward seeds of its runs.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub setting: Setting,
    pub fixture: FixtureConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Output subdirectory under the output root; defaults to `name`.
    pub output_dir: Option<String>,
}

/// One fully determined run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_agents: Option<usize>,
    pub length: usize,
    pub rounds: usize,
    pub iterations: usize,
    pub seed: Option<u64>,
}

impl SweepPoint {
    pub fn trajectory_seed(&self, config: &ExperimentConfig) -> u64 {
        self.seed.map_or(config.data.seed, |s| derive_seed(s, 1))
    }

    pub fn reward_seed(&self, config: &ExperimentConfig) -> u64 {
        self.seed.map_or(config.run.reward_seed, |s| derive_seed(s, 2))
    }

    pub fn run_id(&self, n_agents: usize) -> String {
        let mut id = format!(
            "n{}_t{}_l{}_k{}",
            n_agents, self.length, self.rounds, self.iterations
        );
        if let Some(s) = self.seed {
            id.push_str(&format!("_s{s}"));
        }
        id
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| MarlError::Config(e.to_string()))?;
    config.check()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MarlError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        MarlError::Config(msg) => MarlError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A built model of either kind.
#[derive(Debug, Clone)]
pub enum Fixture {
    Coop(MmdpSpec),
    Game(ZeroSumGameSpec),
}

impl Fixture {
    pub fn model(&self) -> &dyn TabularModel {
        match self {
            Fixture::Coop(spec) => spec,
            Fixture::Game(game) => game,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.model().n_agents()
    }
}

impl ExperimentConfig {
    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(MarlError::Config(msg));
        if self.name.trim().is_empty() {
            return bad("name must be non-empty".into());
        }
        let game_fixture = matches!(self.fixture, FixtureConfig::ZeroSum { .. } | FixtureConfig::Game { .. });
        match (self.setting, game_fixture) {
            (Setting::Coop, true) => return bad("setting \"coop\" needs a cooperative fixture".into()),
            (Setting::Compet, false) => return bad("setting \"compet\" needs a game fixture".into()),
            _ => {}
        }
        let (gamma, r_max) = self.fixture.discount_and_bound();
        if !(gamma > 0.0 && gamma < 1.0) {
            return bad(format!("gamma must be in (0, 1), got {gamma}"));
        }
        if !(r_max > 0.0) {
            return bad(format!("r_max must be positive, got {r_max}"));
        }
        let run = &self.run;
        if run.iterations == 0 || self.sweep.iterations.contains(&0) {
            return bad("iterations must be at least 1".into());
        }
        if self.data.kind == DataKind::Trajectory && (self.data.length == 0 || self.sweep.length.contains(&0)) {
            return bad("trajectory length must be at least 1".into());
        }
        if self.data.kind == DataKind::Exhaustive && !self.sweep.length.is_empty() {
            return bad("a length sweep needs trajectory data".into());
        }
        if let Some(a) = run.alpha {
            if !(a > 0.0) {
                return bad(format!("alpha must be positive, got {a}"));
            }
        }
        if !(run.alpha_scale > 0.0) {
            return bad(format!("alpha_scale must be positive, got {}", run.alpha_scale));
        }
        if !(run.eval_tol > 0.0) {
            return bad(format!("eval_tol must be positive, got {}", run.eval_tol));
        }
        if self.sweep.agents.contains(&0) {
            return bad("agent counts must be at least 1".into());
        }
        if !self.sweep.agents.is_empty()
            && matches!(self.fixture, FixtureConfig::Mmdp { .. } | FixtureConfig::Game { .. })
        {
            return bad("an agent-count sweep needs a generated fixture".into());
        }
        if let Some(dir) = &self.output_dir {
            if Path::new(dir).is_absolute() || dir.split(['/', '\\']).any(|c| c == "..") {
                return bad(format!("output_dir {dir:?} must be a relative path inside the output root"));
            }
        }
        Ok(())
    }

    pub fn output_subdir(&self) -> &str {
        self.output_dir.as_deref().unwrap_or(&self.name)
    }

    /// Trajectory length of the base point; 0 for exhaustive data.
    fn base_length(&self) -> usize {
        match self.data.kind {
            DataKind::Trajectory => self.data.length,
            DataKind::Exhaustive => 0,
        }
    }

    pub fn base_point(&self) -> SweepPoint {
        SweepPoint {
            n_agents: None,
            length: self.base_length(),
            rounds: self.run.rounds,
            iterations: self.run.iterations,
            seed: None,
        }
    }

    /// Cartesian product of the sweep axes in canonical order
    /// (agents, length, rounds, iterations, seed).
    pub fn points(&self) -> Vec<SweepPoint> {
        fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let s = &self.sweep;
        let agents: Vec<Option<usize>> = if s.agents.is_empty() {
            vec![None]
        } else {
            s.agents.iter().map(|&n| Some(n)).collect()
        };
        let seeds: Vec<Option<u64>> = if s.seeds.is_empty() {
            vec![None]
        } else {
            s.seeds.iter().map(|&x| Some(x)).collect()
        };
        let mut points = Vec::new();
        for &n_agents in &agents {
            for &length in &axis(&s.length, self.base_length()) {
                for &rounds in &axis(&s.rounds, self.run.rounds) {
                    for &iterations in &axis(&s.iterations, self.run.iterations) {
                        for &seed in &seeds {
                            points.push(SweepPoint {
                                n_agents,
                                length,
                                rounds,
                                iterations,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        points
    }

    pub fn build_fixture(&self, n_agents: Option<usize>) -> Result<Fixture> {
        let resize = |agents: &[usize]| -> Vec<usize> {
            match n_agents {
                Some(n) => vec![agents.first().copied().unwrap_or(2); n],
                None => agents.to_vec(),
            }
        };
        let mut fixture = match &self.fixture {
            FixtureConfig::Garnet {
                n_states,
                agents,
                branching,
                gamma,
                r_max,
                reward_noise,
                seed,
            } => Fixture::Coop(random_garnet(&GarnetParams {
                n_states: *n_states,
                agents: resize(agents),
                branching: branching.unwrap_or(*n_states),
                gamma: *gamma,
                r_max: *r_max,
                reward_noise: *reward_noise,
                seed: *seed,
            })?),
            FixtureConfig::ZeroSum {
                n_states,
                team1_agents,
                team2_agents,
                branching,
                gamma,
                r_max,
                reward_noise,
                seed,
            } => Fixture::Game(random_zero_sum_game(
                *n_states,
                resize(team1_agents),
                team2_agents.clone(),
                branching.unwrap_or(*n_states),
                *gamma,
                *r_max,
                *reward_noise,
                *seed,
            )?),
            FixtureConfig::Chain {
                n_states,
                n_agents: base,
                slip,
                gamma,
                r_max,
                reward_noise,
            } => Fixture::Coop(chain(
                *n_states,
                n_agents.unwrap_or(*base),
                *slip,
                *gamma,
                *r_max,
                *reward_noise,
            )?),
            FixtureConfig::Gridworld {
                width,
                height,
                n_agents: base,
                slip,
                gamma,
                r_max,
                reward_noise,
            } => Fixture::Coop(gridworld(
                *width,
                *height,
                n_agents.unwrap_or(*base),
                *slip,
                *gamma,
                *r_max,
                *reward_noise,
            )?),
            FixtureConfig::Mmdp {
                n_states,
                agents,
                transition,
                reward_mean,
                reward_noise,
                gamma,
                r_max,
            } => Fixture::Coop(MmdpSpec::new(
                *n_states,
                agents.clone(),
                transition.clone(),
                reward_mean.clone(),
                *reward_noise,
                *gamma,
                *r_max,
            )?),
            FixtureConfig::Game {
                n_states,
                team1_agents,
                team2_agents,
                transition,
                team1_reward_mean,
                team2_reward_mean,
                reward_noise,
                gamma,
                r_max,
            } => Fixture::Game(ZeroSumGameSpec::new(
                *n_states,
                team1_agents.clone(),
                team2_agents.clone(),
                transition.clone(),
                team1_reward_mean.clone(),
                team2_reward_mean.clone(),
                *reward_noise,
                *gamma,
                *r_max,
            )?),
        };
        if self.run.noiseless {
            match &mut fixture {
                Fixture::Coop(spec) => spec.reward_noise = 0.0,
                Fixture::Game(game) => game.reward_noise = 0.0,
            }
        }
        Ok(fixture)
    }

    pub fn build_features(&self, model: &dyn TabularModel) -> Result<FeatureMap> {
        let (s, a, b) = (model.n_states(), model.n_actions(), model.n_opponent_actions());
        match &self.features {
            FeatureConfig::OneHot => FeatureMap::one_hot(s, a, b),
            FeatureConfig::RadialBasis { centers, width } => {
                FeatureMap::radial_basis(s, a, b, centers.clone(), *width)
            }
            FeatureConfig::Custom { table } => {
                let cols = table.first().map_or(0, Vec::len);
                if table.iter().any(|r| r.len() != cols) {
                    return Err(MarlError::Config("custom feature rows differ in length".into()));
                }
                FeatureMap::custom(s, a, b, DMatrix::from_row_iterator(table.len(), cols, table.concat()))
            }
        }
    }

    pub fn build_schedule(&self, n_agents: usize) -> Result<ConsensusSchedule> {
        let with_window = |graphs: GraphSchedule, window: Option<usize>| match window {
            Some(b) => ConsensusSchedule::metropolis(graphs, b),
            None => ConsensusSchedule::metropolis_periodic(graphs),
        };
        match &self.schedule {
            ScheduleConfig::Ring {
                edges_per_round,
                seed,
                window,
            } => with_window(ring_of_graphs(n_agents, *edges_per_round, *seed)?, *window),
            ScheduleConfig::Complete => with_window(GraphSchedule::complete(n_agents)?, None),
            ScheduleConfig::Static { edges } => {
                with_window(GraphSchedule::static_graph(n_agents, edges.clone())?, None)
            }
            ScheduleConfig::Explicit { rounds, window } => {
                with_window(GraphSchedule::new(n_agents, rounds.clone())?, *window)
            }
        }
    }

    pub fn fqi_config(&self, point: &SweepPoint) -> FqiConfig {
        FqiConfig {
            iterations: point.iterations,
            rounds: point.rounds,
            alpha: self.run.alpha,
            alpha_scale: self.run.alpha_scale,
            mode: match self.run.mode {
                ModeConfig::Decentralized => FqiMode::Decentralized,
                ModeConfig::CentralizedExact => FqiMode::CentralizedExact,
            },
            reward_seed: point.reward_seed(self),
            frozen_rewards: self.run.frozen_rewards,
            strict_rank: self.run.strict_rank,
            tie_break: self.run.tie_seed.map_or(TieBreak::Lowest, TieBreak::Seeded),
        }
    }
}
