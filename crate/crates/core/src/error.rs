use thiserror::Error;

#[derive(Debug, Error)]
pub enum GseError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error at frequency bin {bin}: {reason}")]
    Numeric { bin: usize, reason: String },
    #[error("training aborted: {0}")]
    Training(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GseError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GseError::Config(msg.into()))
}

pub(crate) fn degenerate<T>(msg: impl Into<String>) -> Result<T> {
    Err(GseError::Degenerate(msg.into()))
}

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GseError::Input(msg.into()))
}
