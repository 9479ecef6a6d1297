use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the degenerate-feature threshold")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("class count must be at least 2, got {0}")]
    InvalidK(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has no samples in this batch, its centroid is unusable")]
    UnusableCentroid { class: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("probe identity {identity} has no mate in the gallery")]
    MissingMate { identity: u64 },

    #[error("logistic fit needs both label classes present")]
    DegenerateLabels,

    #[error("all regions are missing for probe {probe}, reference {reference}")]
    AllRegionsMissing { probe: usize, reference: usize },

    #[error("degenerate geometry: points are collinear or coincident")]
    DegenerateGeometry,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
