use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SsiError>;

#[derive(Debug, Error)]
pub enum SsiError {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An object was used in a state that does not allow the operation
    /// (for example a gradient tape from a different forward pass).
    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl SsiError {
    pub fn param(msg: impl Into<String>) -> Self {
        SsiError::Parameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SsiError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        SsiError::Format { path: path.into(), message: message.into() }
    }
}
