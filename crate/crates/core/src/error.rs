use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain closure is not connected")]
    DomainDisconnected,

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("enumeration over {size} vertices exceeds the cap of {cap}; use heuristic mode")]
    SizeLimit { size: usize, cap: usize },

    #[error(transparent)]
    Convergence(Box<ConvergenceError>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A solver stopped without meeting its tolerances. Carries the best iterate
/// so callers can inspect or reuse it.
#[derive(Debug, Clone, Error)]
#[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e}, best value {best_value:.12e})")]
pub struct ConvergenceError {
    pub solver: &'static str,
    pub iterations: usize,
    pub residual: f64,
    pub best_value: f64,
    pub best_iterate: Vec<f64>,
}

impl From<ConvergenceError> for Error {
    fn from(e: ConvergenceError) -> Self {
        Error::Convergence(Box::new(e))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
