use thiserror::Error;

/// Errors produced anywhere in the matting stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad caller input rather than by data or runtime state.
    pub fn is_argument_error(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Dimension(_) | Error::Capacity(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}
pub(crate) use arg_err;
pub(crate) use dim_err;
