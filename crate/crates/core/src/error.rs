use thiserror::Error;

/// Errors raised by the guidance laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("time-to-go must be positive, got {0}")]
    NonPositiveTimeToGo(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        Error::Csv {
            line,
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
