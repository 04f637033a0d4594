use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Innovation variance not strictly positive or not finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("covariance degeneracy: {0}")]
    CovarianceDegeneracy(String),

    #[error("degenerate likelihood: no particle has a finite likelihood")]
    DegenerateLikelihood,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("trajectory has no samples")]
    EmptyTrajectory,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }

    /// True for failures raised by an estimator while stepping (as opposed to
    /// configuration or I/O problems).
    pub fn is_estimator_failure(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::CovarianceDegeneracy(_) | Error::DegenerateLikelihood
        )
    }
}
