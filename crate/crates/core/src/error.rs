use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("unsupported bit depth {depth} in {path}")]
    UnsupportedBitDepth { path: PathBuf, depth: u32 },
    #[error("truncated payload in {path}: {reason}")]
    Truncated { path: PathBuf, reason: String },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("crop size {size} exceeds image bounds {height}x{width}")]
    CropTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("image {height}x{width} is smaller than one {k}x{k} cell")]
    ImageSmallerThanCell { height: usize, width: usize, k: usize },
    #[error("invalid cell size {0}; must be at least 2")]
    InvalidCellSize(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("image too small for the metric: {0}")]
    ImageTooSmall(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::Io {
                path: path.into(),
                source,
            }
        }
    }
}
