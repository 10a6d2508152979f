//! Error types shared across the crate.

use crate::force::NoSafeThreshold;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensor shapes that were required to agree did not.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller-supplied runtime input is out of domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// On-disk data is missing, malformed, or inconsistent with its manifest.
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced NaN or Inf.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A tensor id was used with a tape that did not create it.
    #[error("tensor does not belong to this tape")]
    ForeignTensor,

    /// No candidate force threshold was predicted safe.
    #[error(transparent)]
    NoSafeThreshold(#[from] NoSafeThreshold),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
