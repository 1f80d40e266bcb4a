//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch: {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// A value outside the operation's domain (bad label, bad cardinality, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value that cannot be acted on.
    #[error("invalid config: {0}")]
    Config(String),

    /// A cache or state object used out of sequence.
    #[error("state error: {0}")]
    State(String),

    /// Non-finite values appeared during optimization.
    #[error("numeric failure at {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A file whose header does not match the expected format.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A file shorter (or longer) than its header promises.
    #[error("length error in {path}: expected {expected} bytes, got {actual}")]
    Length {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    /// Two files that must agree do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
