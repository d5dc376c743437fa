use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op}: class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange {
        op: &'static str,
        index: u32,
        num_classes: usize,
    },

    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },

    #[error("dataset: {0}")]
    Data(String),

    #[error("failed to decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (samples {samples:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        samples: Vec<usize>,
        loss: f32,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures specific to reading a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"NPNT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}, expected 1")]
    UnsupportedVersion(u32),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("malformed config block: {0}")]
    BadConfig(String),
    #[error("unsupported dtype tag {dtype} for tensor {name}")]
    UnsupportedDtype { name: String, dtype: u8 },
    #[error("tensor {0} is not part of the model")]
    UnknownTensor(String),
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor {name} has dims {found:?}, model expects {expected:?}")]
    DimsMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}
