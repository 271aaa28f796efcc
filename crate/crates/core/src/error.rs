use thiserror::Error;

/// Errors surfaced by the benchmark library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate calibration: all sinogram dynamics are zero")]
    DegenerateCalibration,

    #[error("numerical failure in {method} at step {step}: {detail}")]
    NumericalFailure {
        method: String,
        step: String,
        detail: String,
    },

    #[error("unsupported dimension {dim}: grid oracle only supports n <= {max}")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("batch failed: {failed}/{total} chains diverged (threshold 1%)")]
    BatchFailure { failed: usize, total: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn dim_mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
