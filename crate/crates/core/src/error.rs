use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time grid must be non-empty and strictly increasing")]
    InvalidGrid,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension {dim} has constant observed values")]
    ZeroVariance { dim: usize },
    #[error("dimension {dim} has fewer than two observed values")]
    EmptyDimension { dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("split of {history}+{horizon} points does not fit a grid of length {len}")]
    SplitTooLong { history: usize, horizon: usize, len: usize },
    #[error("invalid split: history and horizon must both be at least 1")]
    InvalidSplit,
    #[error("matrix is not positive definite even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("invalid kernel hyperparameters (variance and lengthscale must be positive)")]
    InvalidKernel,
    #[error("individual {0} has no observed values")]
    EmptyIndividual(usize),
    #[error("model handles univariate series only, got {0} dimensions")]
    UnsupportedMultivariate(usize),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("gamma {0} outside [0, 1]")]
    InvalidGamma(f64),
    #[error("non-finite loss encountered")]
    NonFiniteLoss,
    #[error("incomplete series: training requires every grid point observed")]
    IncompleteSeries,
    #[error("history must contain at least one value")]
    EmptyHistory,
    #[error("input must contain at least one value")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("time index {t} out of range for trajectories of length {len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
