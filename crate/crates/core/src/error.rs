use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotSpd(String),

    #[error("degenerate slerp arc: quaternions are antipodal (dot = {dot})")]
    DegenerateArc { dot: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("jacobian is singular (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("simulation diverged at tick {tick}: |qdot| = {speed:.3e}")]
    Divergence { tick: u64, speed: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("impact model is unusable: slope {slope} must be positive")]
    UnusableModel { slope: f64 },

    #[error("trajectory parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
