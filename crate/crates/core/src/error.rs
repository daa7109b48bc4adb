use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("dimension mismatch in `{key}`: expected {expected}, found {found}")]
    Dimension {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("step size underflow at t = {t}: the cumulant equation is too stiff for the explicit stepper")]
    Stiffness { t: f64 },

    #[error("quadrature did not converge: achieved error estimate {achieved:e} (requested {requested:e})")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient replicates: need at least {required}, got {actual}")]
    InsufficientReplicates { required: usize, actual: usize },

    #[error("refused: {0}")]
    Refused(String),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
