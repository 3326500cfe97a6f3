use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Poisson rate {rate:e} exceeds the simulation limit of 1e15")]
    RateOverflow { rate: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("support starvation: acceptance rate {rate:.2e} after {proposals} proposals")]
    SupportStarvation { rate: f64, proposals: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
