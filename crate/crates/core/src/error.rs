use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("degenerate mesh `{0}`: {1}")]
    DegenerateMesh(String, &'static str),

    #[error("catalog has {0} objects, at least 5 are required for a 4:1 split")]
    TooFewObjects(usize),

    #[error("no catalog objects tagged `{0}`")]
    EmptySplit(&'static str),

    #[error("invalid depth range: near {near} must be below far {far}")]
    InvalidRange { near: f64, far: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("depth map has no valid pixel")]
    AllInvalid,

    #[error("visible mask is not contained in the amodal mask")]
    ContainmentViolation,

    #[error("amodal mask is empty")]
    EmptyAmodal,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("sample `{0}` not found")]
    NotFound(String),

    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),

    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dims(expected: &[usize], actual: &[usize]) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
