use thiserror::Error;

/// Errors produced by ingestion, training, evaluation and the stacking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV content. `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A stacking level-0 configuration failed; carries the config name.
    #[error("level-0 config '{name}' failed: {source}")]
    Config {
        name: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
