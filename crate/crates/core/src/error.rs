use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimator, simulator, and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: target and observer are {distance:e} m apart")]
    DegenerateGeometry { distance: f64 },

    #[error("invalid bearing: norm {norm} is not 1")]
    InvalidBearing { norm: f64 },

    #[error("sampling time must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("singular matrix in {context}")]
    Singular { context: &'static str },

    #[error("numerical degeneracy in {context}: smallest eigenvalue {min_eigenvalue:e}")]
    NumericalDegeneracy {
        context: &'static str,
        min_eigenvalue: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unobservable: normal matrix smallest singular value {sigma_min:e}")]
    Observability { sigma_min: f64 },

    #[error("insufficient trials: got {got}, need at least {need}")]
    InsufficientTrials { got: usize, need: usize },

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
