use robust_scatter::error::EstimationError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Estimation(#[from] EstimationError),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        BenchError::Invalid(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for anything the caller can fix by changing the
    /// input, 3 for failures inside the numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Estimation(e) if !e.is_input_error() => 3,
            _ => 2,
        }
    }
}
