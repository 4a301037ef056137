use thiserror::Error;

/// Errors surfaced by the dcda pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("dataset layout error: {0}")]
    Layout(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("sampler exhausted; reset it to start a new epoch")]
    Exhausted,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
