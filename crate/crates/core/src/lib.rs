//! Distributed online sparse inverse covariance estimation.
//!
//! Agents on a communication graph each measure a subset of a Gaussian
//! vector stream. Every time step they agree on the covariance through a
//! leader/follower consensus protocol and advance a graphical-lasso dual
//! iteration warm-started from the previous step.

pub mod analysis;
pub mod consensus;
pub mod dgama;
pub mod error;
pub mod harness;
pub mod matx;
pub mod model;
pub mod network;
pub mod rng;
pub mod solver;

pub use dgama::{History, Params, Simulation, ZetaMode};
pub use error::{Error, Result};
pub use harness::{load_config, run_experiment, ExperimentConfig};
pub use matx::SymMatrix;
pub use network::Topology;
