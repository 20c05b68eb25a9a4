use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("bandwidth undefined: need at least 2 rows, got {rows}")]
    BandwidthUndefined { rows: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("could not inject {anomaly} anomaly at C={cardinality} after {tries} tries")]
    Generation {
        anomaly: String,
        cardinality: usize,
        tries: usize,
    },

    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
