use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine, solver and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("stability error at step {step}: CFL {cfl:.4} exceeds {limit}")]
    Stability { step: usize, cfl: f64, limit: f64 },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
