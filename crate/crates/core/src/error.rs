use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate basis: normal is zero or parallel to the up vector")]
    DegenerateBasis,
    #[error("normals are antiparallel; the minimal rotation is undefined")]
    AntiparallelNormals,
    #[error("tablet distance along its ray must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("superpixel mask is empty")]
    EmptySuperpixel,
    #[error("non-finite gradient on tablet {tablet}")]
    NonFiniteGradient { tablet: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("plane {0} has non-finite geometry or texture")]
    NonFinitePlane(usize),
    #[error("plane {0} not found")]
    NotFound(usize),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
