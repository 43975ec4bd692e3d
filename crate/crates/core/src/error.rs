use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// Implicit differentiation requires the forward iteration to sit at a fixed point.
    #[error("sinkhorn iteration did not converge: marginal residual {residual:e} exceeds {tolerance:e}")]
    NonConvergence { residual: f64, tolerance: f64 },

    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
