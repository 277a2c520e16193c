//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("non-finite intermediate at example {index} while computing {what}")]
    NonFiniteAtExample { index: usize, what: &'static str },

    #[error("batch must be nonempty")]
    EmptyBatch,

    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),

    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("attribute set must be nonempty")]
    EmptyAttributeSet,

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("context group {group:?} has {count} examples, exceeding budget {budget}")]
    BudgetExceeded {
        group: String,
        count: usize,
        budget: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}; last finite loss {last_loss}")]
    Diverged { step: usize, last_loss: f64 },

    #[error("checkpoint schema {found:?} is not supported (expected {expected:?})")]
    UnsupportedSchema { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.display().to_string(),
            source,
        }
    }
}
