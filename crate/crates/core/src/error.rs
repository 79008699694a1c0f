use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Loss components captured when a training step goes non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDiagnostics {
    pub reconstruction: f64,
    pub kl: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at iteration {iteration}: loss {loss} (recon {}, kl {:?})", diagnostics.reconstruction, diagnostics.kl)]
    Training {
        iteration: usize,
        loss: f64,
        diagnostics: LossDiagnostics,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
