use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value encountered in parameter `{0}`")]
    NonFinite(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported version {0}")]
    Version(u32),
    #[error("checkpoint: truncated file at byte {0}")]
    Truncated(usize),
    #[error("checkpoint: invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("checkpoint: parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: missing parameter `{0}`")]
    Missing(String),
    #[error("checkpoint: unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("checkpoint: config mismatch: checkpoint has\n{found}\nexpected\n{expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint: {0} trailing bytes after config")]
    Trailing(usize),
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
