use thiserror::Error;

/// Errors raised by the channel, waveform, sensing and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("pilot placement failed: {0}")]
    Placement(String),

    #[error("empty support")]
    EmptySupport,

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("basis index {index} has eigenvalue {lambda:e} below floor {floor:e}")]
    BelowFloor { index: usize, lambda: f64, floor: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
