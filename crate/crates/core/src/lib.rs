//! Decentralized fitted Q-iteration for networked multi-agent reinforcement
//! learning, cooperative and two-team zero-sum, with the exact tabular oracles
//! used to score it.

pub mod comms;
pub mod consensus_opt;
pub mod error;
pub mod features;
pub mod fqi;
pub mod harness;
pub mod matrix_games;
pub mod model;
pub mod oracles;

pub use error::{MarlError, Result};
