use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("model dimension mismatch in {layer}: expected {expected}, got {actual}")]
    Dimension {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("training diverged at iteration {iteration}: loss is {value}")]
    Diverged { iteration: usize, value: f64 },

    #[error("{path}: bad magic {found:?}, expected \"TFV1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: truncated feature file, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: clip count {num_clips} x feature dim {feature_dim} overflows")]
    SizeOverflow {
        path: PathBuf,
        num_clips: u32,
        feature_dim: u32,
    },

    #[error("{path}: at {json_path}: {msg}")]
    Schema {
        path: PathBuf,
        json_path: String,
        msg: String,
    },

    #[error("{context}: {msg}")]
    Invalid { context: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Invalid {
            context: context.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
