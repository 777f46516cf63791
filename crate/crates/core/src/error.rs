use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-binary value {value} in {what}")]
    NonBinary { what: String, value: f64 },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("slice of {rows}x{cols} cannot hold the crop window (needs at least {min_rows}x{min_cols})")]
    SliceTooSmall {
        rows: usize,
        cols: usize,
        min_rows: usize,
        min_cols: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid architecture spec: {0}")]
    InvalidSpec(String),

    #[error("invalid loss parameters: {0}")]
    InvalidLossParams(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint spec mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch} (cases: {cases})")]
    NonFiniteLoss {
        value: f64,
        epoch: usize,
        batch: usize,
        cases: String,
    },

    #[error("missing slices for case {case_id}: {detail}")]
    MissingSlices { case_id: String, detail: String },

    #[error("corrupt stack store: {0}")]
    CorruptStore(String),

    #[error("nifti")]
    Nifti(#[from] nifti::NiftiError),

    #[error("json")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
