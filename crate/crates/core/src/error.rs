use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (dimensions, hyperparameters, files).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input that has no meaningful answer, e.g. normalizing an all-zero batch.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A non-finite loss or gradient was produced during training.
    #[error("numeric failure at iteration {iteration}: {message}")]
    Numeric {
        iteration: u64,
        message: String,
        last_checkpoint: Option<PathBuf>,
    },

    /// A filter left nothing to compute on.
    #[error("no data: {0}")]
    NoData(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
