//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// The CLI maps these onto process exit codes: config/contract/dimension
/// errors exit 2, solver failures exit 3, training divergence exits 4 and
/// I/O problems exit 5.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected layout) disagree on shape.
    #[error("dimension mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Newton iteration failed to converge.
    #[error("solver failure at step {time_index} (t = {time}): residual {residual:.3e} after {iterations} iterations")]
    Solver {
        time_index: usize,
        time: f64,
        residual: f64,
        iterations: usize,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// File format violation while reading an artifact.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
