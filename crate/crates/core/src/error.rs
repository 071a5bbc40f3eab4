use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u16,
        found: u16,
    },

    #[error("unsupported dtype code {0} (only 1 = f32 is defined)")]
    UnsupportedDtype(u16),

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} at sample {index} is outside [0, {n_classes})")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        n_classes: u32,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("embedding file {path} declares dim {found}, manifest says {expected}")]
    DimMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("sample count mismatch in split '{split}': {detail}")]
    Alignment { split: String, detail: String },

    #[error("invalid fusion spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("result table: {0}")]
    Report(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::Manifest(_)
                | Error::DimMismatch { .. }
                | Error::Alignment { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Shape(_)
                | Error::Report(_)
        )
    }
}
