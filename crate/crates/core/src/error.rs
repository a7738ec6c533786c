use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// No correspondence survived the distance gate.
    #[error("no correspondences")]
    NoCorrespondences,

    #[error("registration failed at iteration {iteration}: no correspondences")]
    RegistrationFailed { iteration: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty scan")]
    EmptyScan,

    /// Neighborhood covariance has zero trace.
    #[error("degenerate neighborhood")]
    DegenerateNeighborhood,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{format} format error at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(format: &'static str, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
