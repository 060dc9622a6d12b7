use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("collision state: gap {gap} m")]
    Collision { gap: f64 },

    #[error("no equilibrium gap in [{lo}, {hi}] m for {what}")]
    NoEquilibrium { what: String, lo: f64, hi: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("generation {generation}: no particle accepted at tolerance {tolerance}")]
    ZeroAcceptance { generation: usize, tolerance: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at episode {episode}: {detail}")]
    Divergence {
        episode: usize,
        detail: String,
        checkpoint: Option<PathBuf>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, row: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            msg: msg.into(),
        }
    }
}
