use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// Variants are grouped by failure class so callers (notably the CLI)
/// can map them onto exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched vector/matrix dimensions.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Mathematically undefined request (zero-norm vector, empty blend, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration value (non-positive temperature, bad MRL dims, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed caller input (empty text, out-of-range token id, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent or insufficient data (ragged batches, coverage gaps, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite value produced or detected during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
