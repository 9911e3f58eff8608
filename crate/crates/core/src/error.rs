use std::path::PathBuf;

use etnet_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

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

    #[error("no mask found for image stem(s): {}", .stems.join(", "))]
    MissingMask { stems: Vec<String> },

    #[error("{path}: label value {value} is out of range for {classes} classes")]
    LabelOutOfRange {
        value: u8,
        classes: usize,
        path: PathBuf,
    },

    #[error("unknown configuration key `{0}`")]
    UnknownConfigKey(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "non-finite loss at iteration {iteration}: total={total}, seg={seg}, edge={}",
        edge.map_or_else(|| "-".to_string(), |e| e.to_string())
    )]
    Diverged {
        iteration: u64,
        total: f64,
        seg: f64,
        edge: Option<f64>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
