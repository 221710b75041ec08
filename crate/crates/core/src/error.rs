use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"DTF1\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated: {0}")]
    Truncated(String),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("image {image_id}: T not divisible by t (T={resized_side}, t={patch_side})")]
    IndivisiblePatch {
        image_id: String,
        resized_side: u32,
        patch_side: u32,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("png error in {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("expected 8-bit grayscale PNG, found {0}")]
    NotGrayscale(String),

    #[error("modularity undefined for m = 0")]
    EdgelessGraph,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ground-truth label {0} outside merge table")]
    UnknownGtLabel(u8),

    #[error("predicted label {label} out of range for K = {num_clusters}")]
    PredictionOutOfRange { label: u8, num_clusters: usize },

    #[error("missing crop feature for image {image_id} segment {segment_id}")]
    MissingCropFeature { image_id: String, segment_id: usize },

    #[error("nothing to export")]
    NothingToExport,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
