use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("shape conflict on layer `{layer}`: model has {expected:?}, file has {found:?}")]
    ShapeConflict {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("image format at byte {offset}: {msg}")]
    ImageFormat { offset: usize, msg: String },

    #[error("dataset error at {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("undefined metric: class {0} has no samples")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("stale cache at {path}: {msg}")]
    StaleCache { path: PathBuf, msg: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidParam(_) => "invalid_param",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::ShapeConflict { .. } => "shape_conflict",
            Error::WeightFormat(_) => "weight_format",
            Error::ImageFormat { .. } => "image_format",
            Error::Dataset { .. } => "dataset",
            Error::Split(_) => "split",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Empty(_) => "empty",
            Error::Degenerate(_) => "degenerate",
            Error::StaleCache { .. } => "stale_cache",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
