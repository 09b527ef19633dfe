use std::path::PathBuf;

/// Errors for the whole vocoder pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty waveform")]
    EmptyWaveform,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("waveform too short: got {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("silent input: peak is zero")]
    SilentInput,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("wav format error in {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
