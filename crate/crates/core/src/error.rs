use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group has {len} members, at least 2 are required")]
    GroupTooSmall { len: usize },

    #[error("non-finite reward {value}")]
    InvalidReward { value: f64 },

    #[error("importance ratio must be positive, got {value}")]
    InvalidRatio { value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("action {action} outside vocabulary of size {vocab}")]
    InvalidAction { action: usize, vocab: usize },

    #[error("prompt {prompt} outside range of {count} prompts")]
    InvalidPrompt { prompt: usize, count: usize },

    #[error("prior strategy `{strategy}` requires {missing} in the prior context")]
    MissingPriorContext {
        strategy: &'static str,
        missing: &'static str,
    },

    #[error("trust weight must be positive, got {value}")]
    InvalidWeight { value: f64 },

    #[error("non-finite {what} at step {step} for prompt {prompt}")]
    NonFiniteLoss {
        step: usize,
        prompt: usize,
        what: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
