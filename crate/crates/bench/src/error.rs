use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Estimation(#[from] ctmap::Error),

    #[error("simulation blew up at node {node}")]
    SimulationBlowUp { node: usize },

    #[error("config {}: line {line}: {what}", path.display())]
    Config { path: PathBuf, line: usize, what: String },

    #[error("invalid experiment: {0}")]
    Invalid(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
