use ctmap_scan::ScanError;
use thiserror::Error;

use crate::ieks::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A matrix that must be invertible (or positive definite) was not, or an
    /// integration produced a non-finite value.
    #[error("numeric failure at node {node}: {what}")]
    Numeric { node: usize, what: String },

    /// A linear solve inside an element combination failed.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("function evaluation failed: {0}")]
    Evaluation(String),

    /// The information matrix has no inverse: neither prior nor data pin the state down.
    #[error("uninformative posterior: {0}")]
    Uninformative(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iterated linearization diverged: cost rose for {} consecutive iterations", .trace.consecutive_increases())]
    Divergence { trace: IterationTrace },
}

impl Error {
    pub(crate) fn numeric(node: usize, what: impl Into<String>) -> Self {
        Error::Numeric {
            node,
            what: what.into(),
        }
    }

    pub(crate) fn parameter(what: impl Into<String>) -> Self {
        Error::Parameter(what.into())
    }
}

impl From<ScanError> for Error {
    fn from(e: ScanError) -> Self {
        Error::Parameter(e.to_string())
    }
}
