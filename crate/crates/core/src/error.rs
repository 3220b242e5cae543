use thiserror::Error;

/// Errors produced across the data, policy, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values (bounds, probabilities, counts).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Rejection sampling could not reach the requested class counts.
    #[error("generation error: {0}")]
    Generation(String),

    /// A symbol or token id outside the vocabulary.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A non-finite value appeared during a numerical computation.
    #[error("numerical error at {location}: {detail}")]
    Numerical { location: String, detail: String },

    /// A persisted artifact failed validation on load.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
