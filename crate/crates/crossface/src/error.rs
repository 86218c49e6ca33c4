use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("split precondition failed: {0}")]
    Split(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite {term} at epoch {epoch} step {step}")]
    Divergence {
        term: String,
        epoch: usize,
        step: usize,
    },

    #[error("verification error: {0}")]
    Verification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code category: config/usage errors are distinguishable from runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}
