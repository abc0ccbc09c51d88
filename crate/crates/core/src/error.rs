use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error in {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("corrupt file {}: {reason}", path.display())]
    Corruption { path: PathBuf, reason: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: u64 },

    #[error("no contexts activate feature {feature} of layer {layer}")]
    NoQualifyingContexts { layer: usize, feature: usize },

    #[error("simulator protocol error for feature {feature}: {reason} (transcript: {transcript})")]
    Protocol {
        feature: usize,
        reason: String,
        transcript: String,
    },

    #[error("simulator client failed for feature {feature} after {attempts} attempt(s): {reason}")]
    Client {
        feature: usize,
        attempts: u32,
        reason: String,
    },

    #[error("model oracle failed: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
