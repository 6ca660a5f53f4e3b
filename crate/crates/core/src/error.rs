use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("{routine} did not converge within {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance entry ({l}, {m}) has no leader agent")]
    NoLeader { l: usize, m: usize },

    #[error("topology is not jointly observable: pair ({l}, {m}) is seen by no agent")]
    NotJointlyObservable { l: usize, m: usize },

    #[error("agent {agent} received conflicting values for variable {variable}: {a} vs {b}")]
    InconsistentData {
        agent: usize,
        variable: usize,
        a: f64,
        b: f64,
    },

    #[error("invalid eigenvalue box [{a}, {b}]")]
    InvalidBox { a: f64, b: f64 },

    #[error("delta must lie in (0, 1/2), got {0}")]
    InvalidDelta(f64),

    #[error("missing log entry: {0}")]
    MissingLog(String),

    #[error("agent {agent} failed at t = {t}: {source}")]
    AgentFailure {
        agent: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error in {origin} at line {line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } | Error::Csv(_) => 2,
            Error::NotJointlyObservable { .. } | Error::NoLeader { .. } => 3,
            Error::NotPositiveDefinite { .. } => 4,
            Error::NonConvergence { .. } => 5,
            Error::AgentFailure { source, .. } => source.exit_code(),
            Error::DimensionMismatch { .. } | Error::InconsistentData { .. } => 6,
            Error::InvalidBox { .. } | Error::InvalidDelta(_) | Error::MissingLog(_) => 7,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
