use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid render size {0}: supported sizes are 64 and 128")]
    InvalidRenderSize(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of domain in {context}: {value} (expected {expected})")]
    Domain {
        context: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no groups found under {0}")]
    NoGroups(PathBuf),

    #[error("group {group_id} is incomplete: missing {missing} view")]
    IncompleteGroup { group_id: String, missing: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("stage mismatch: expected a {expected} checkpoint, found {found}")]
    StageMismatch { expected: String, found: String },

    #[error("checkpoint configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite {stage} loss at epoch {epoch}, batch {batch}: {what} = {value}")]
    NonFiniteLoss {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        what: &'static str,
        value: f64,
    },

    #[error("missing tensor {0} in checkpoint")]
    MissingTensor(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
