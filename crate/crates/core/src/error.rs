use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("io error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular transform (|det| = {det:e})")]
    Singular { det: f64 },

    /// Evaluation left the domain where it is defined, e.g. a homography
    /// sending a point to infinity.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// Inputs carry no usable signal (constant frames, zero saliency mass).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }
}
