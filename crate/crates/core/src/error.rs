//! Error types shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

/// Top-level error type for all library operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record is missing a required field or cannot be parsed.
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    /// A field value is outside its allowed domain.
    #[error("value error at {location}: {message}")]
    Value { location: String, message: String },

    /// Duplicate document id within one corpus.
    #[error("duplicate document id '{id}' (first seen at {first}, again at {second})")]
    DuplicateId {
        id: String,
        first: String,
        second: String,
    },

    /// Invalid argument to an operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A label has no documents, so a stratified split is impossible.
    #[error("stratification error: label {label} has no documents in corpus '{corpus}'")]
    Stratification { label: u8, corpus: String },

    /// A sampling request exceeds the available pool.
    #[error("capacity error: {context} requires {required} documents with label {label}, pool has {available}")]
    Capacity {
        context: String,
        label: u8,
        required: usize,
        available: usize,
    },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    /// Predictions and gold labels do not line up.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A grid job failed; the sampling seed it belongs to is degraded.
    #[error("job failure in scenario '{scenario}' (sampling seed {sampling_seed}, model seed {model_seed}): {message}")]
    Job {
        scenario: String,
        sampling_seed: u64,
        model_seed: u64,
        message: String,
    },

    /// An internal invariant was violated; indicates a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn value(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Value {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code category for the CLI: 2 config, 3 data, 4 job failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Job { .. } | Error::TrainingDiverged { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
