use thiserror::Error;

/// Errors raised by kernel evaluation, estimation, sampling and the harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("weight matrix is singular even after jitter {jitter:e} (degenerate score covariance)")]
    SingularWeight { jitter: f64 },

    #[error("insufficient data: need at least {needed} units, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("insufficient draws: need at least {needed}, got {got}")]
    InsufficientDraws { needed: usize, got: usize },

    #[error("parameter constraint violated at coordinate {0}")]
    Constraint(usize),

    #[error("latent estimation failed at unit {unit}: {reason}")]
    Estimation { unit: usize, reason: String },

    #[error("chain initialization failed: {0}")]
    Initialization(String),

    #[error("design matrix is singular: {0}")]
    SingularDesign(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("experiment failed: {failed} of {total} replications failed")]
    Experiment { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for QError {
    fn from(e: std::io::Error) -> Self {
        QError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QError>;
