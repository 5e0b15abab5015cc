use thiserror::Error;

pub type Result<T> = std::result::Result<T, MarlError>;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix {index} of the schedule is not doubly stochastic: {detail}")]
    Stochasticity { index: usize, detail: String },

    #[error("schedule fails the joint spectrum check: chi = {chi:.6} for the window ending at round {window_end}")]
    Connectivity { chi: f64, window_end: usize },

    #[error("DIGing diverged at round {round}: residual {residual:.3e} exceeds 1e6 x initial {initial:.3e}; reduce the stepsize")]
    Stepsize {
        round: usize,
        residual: f64,
        initial: f64,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<MarlError>,
    },

    #[error("design matrix is rank deficient: rank {rank} < dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("no convergence after {sweeps} sweeps (last change {last_delta:.3e})")]
    NoConvergence { sweeps: usize, last_delta: f64 },

    #[error("matrix game solve failed for agent {agent}, sample {sample}: {source}")]
    GameSolve {
        agent: usize,
        sample: usize,
        #[source]
        source: Box<MarlError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("validation failed:\n{0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MarlError {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        MarlError::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MarlError::Config(_) | MarlError::Argument(_) | MarlError::Io(_) | MarlError::Csv(_) => 2,
            MarlError::Iteration { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
