use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("affine is singular")]
    SingularAffine,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("brain mask is empty; supply a mask volume with --mask")]
    EmptyMask,

    #[error("no bolus passage found")]
    NoBolus,

    #[error("no voxel with positive peak concentration in the AIF search region; supply an AIF manually")]
    NoAif,

    #[error("cohort: {0}")]
    Cohort(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
