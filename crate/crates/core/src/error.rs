use std::path::PathBuf;

use thiserror::Error;

use crate::qp::AlphaSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("infeasible problem: C = {c} with {n} examples gives C * n < 1")]
    Infeasible { c: f64, n: usize },

    /// The solver hit its iteration cap; `best` holds the last feasible iterate.
    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:.3e})")]
    NotConverged {
        iterations: usize,
        violation: f64,
        best: Box<AlphaSolution>,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
