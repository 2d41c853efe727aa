//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library, grouped so the CLI can map them onto
/// its exit-code contract (usage 1, data/validation 2, numerical 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed text input (CSV matrix or label file), with a 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Malformed binary matrix file, with the byte offset of the problem.
    #[error("{path}: byte {offset}: {msg}")]
    Binary {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// Shape disagreement between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Data violates a documented invariant (non-finite values, non-distribution
    /// rows, out-of-range labels, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A prototype row with zero norm; cosine similarity is undefined for it.
    #[error("singular prototype for class {class}: zero-norm row")]
    SingularPrototype { class: usize },

    /// A class with no instances where a positive count is required.
    #[error("class {class} has no instances; drop it or re-index before modulation")]
    EmptyClass { class: usize },

    /// A parameter outside its documented range. The CLI reports these as
    /// usage errors.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Non-finite values produced during iterative computation.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
