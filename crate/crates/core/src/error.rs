use thiserror::Error;

/// Errors raised across the simulator, calibration and experiment layers.
#[derive(Debug, Error)]
pub enum SslcaError {
    #[error("index ({row}, {col}) out of range for {rows}x{cols} crossbar")]
    Index {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SslcaError {
    pub(crate) fn dims(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        SslcaError::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            SslcaError::Config(_)
            | SslcaError::Domain(_)
            | SslcaError::Dimension { .. }
            | SslcaError::Index { .. }
            | SslcaError::Json(_) => 2,
            SslcaError::Data(_) | SslcaError::Io(_) => 3,
            SslcaError::Infeasible(_) => 4,
            SslcaError::Instability(_) | SslcaError::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SslcaError>;
