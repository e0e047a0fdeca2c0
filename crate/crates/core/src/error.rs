use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectrum {mu:?} is not in the cone Gamma_{k}")]
    ConeViolation { mu: Vec<f64>, k: usize },

    #[error("inadmissible point: mu = {mu:?}")]
    InadmissiblePoint { mu: Vec<f64> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver failed after {} iterations: {message}", residual_history.len())]
    SolverFailure {
        message: String,
        residual_history: Vec<f64>,
    },

    #[error("subsolution construction failed: {message} (at {point:?})")]
    ConstructionFailure { message: String, point: Vec<f64> },

    #[error("grid construction error: {0}")]
    GridConstruction(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
