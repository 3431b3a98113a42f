//! Shared error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A required matrix operation failed (non-PD covariance, singular
    /// system, weight underflow, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The density ratio of a candidate pair against its merge has no
    /// finite integral; the pair must be excluded from merging.
    #[error("density ratio integral is unbounded for this pair")]
    UnboundedRatio,

    /// Adaptive quadrature hit its depth limit before reaching the
    /// requested tolerance; carries the best estimate so far.
    #[error("quadrature did not converge (best estimate {best:.6e})")]
    QuadNoConvergence { best: f64 },

    /// Every candidate pair was excluded, so the reducer cannot take a
    /// step. Carries the trace accumulated before the failure.
    #[error("reduction stuck: every candidate pair excluded under criterion `{criterion}`")]
    ReductionStuck {
        criterion: String,
        partial: Option<Box<crate::reduce::ReductionTrace>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end:
    /// 2 argument error, 3 numeric error, 4 stuck/non-convergence, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Json(_) => 2,
            Error::Numeric(_) | Error::UnboundedRatio => 3,
            Error::QuadNoConvergence { .. } | Error::ReductionStuck { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}
