use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain of the function (non-finite or non-positive sizes).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration parameter is out of its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Vector lengths or table sizes do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The time integrator could not make progress.
    #[error("integration failure at t = {time:.6e}: {reason}")]
    Integration { time: f64, reason: String },

    /// The solution is degenerate (e.g. a vanishing monomer concentration).
    #[error("degenerate solution: {0}")]
    Degenerate(String),

    /// Adaptive quadrature ran out of refinement budget before reaching its tolerance.
    #[error("quadrature inconclusive: {0}")]
    Quadrature(String),

    /// The kernel is outside the regime where the requested object exists.
    #[error("regime error: |gamma + 2 lambda| = {value:.6} >= 1, {reason}")]
    Regime { value: f64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
