use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong across the simulator and analysis suite.
#[derive(Debug, Error)]
pub enum SimError {
    /// The plant state left the finite range; the run is aborted and the
    /// offending step reported.
    #[error("non-finite plant state at step {step}")]
    NonFiniteState { step: i64 },

    #[error("non-finite state estimate at step {step}")]
    NonFiniteEstimate { step: i64 },

    /// Innovation covariance is numerically singular; signals misconfigured
    /// measurement covariances.
    #[error("innovation covariance numerically singular (condition ~ {cond:.3e})")]
    SingularInnovation { cond: f64 },

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("insufficient calibration samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("stealthiness bound diverges: decay rate lambda must exceed 1 (got {lambda})")]
    DivergentBound { lambda: f64 },

    /// The incremental-stability fit found no decay; reported, not fatal.
    #[error("no incremental decay: fitted lambda {lambda} <= 1")]
    NoDecay { lambda: f64 },

    #[error("fake-state replay mismatch: max discrepancy {max_err:.3e} exceeds {tol:.1e}")]
    ReplayMismatch { max_err: f64, tol: f64 },

    #[error("paired runs do not match: {0}")]
    MismatchedRuns(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation error: {0}")]
    Validation(String),

    #[error("record format error: {0}")]
    RecordFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    /// Process exit code for the CLI: 2 for validation/parse problems,
    /// 3 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Parse(_) | SimError::Validation(_) => 2,
            _ => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }
}
