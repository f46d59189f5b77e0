use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure in the crate. Variants are grouped by the module that raises them so
/// callers (and the CLI) can attribute a message to its origin.
#[derive(Debug, Error)]
pub enum Error {
    // tensor
    #[error("tensor: shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor: invalid axis {axis} for rank {rank} in {op}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("tensor: {op} out of bounds: {detail}")]
    OutOfBounds { op: &'static str, detail: String },
    #[error("tensor: backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor: non-finite value encountered in {0}")]
    NonFinite(String),

    // nn
    #[error("nn: {layer} expected {expected} channels, got {got}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("nn: {0} received an empty sequence")]
    EmptySequence(&'static str),
    #[error("nn: {0}")]
    Layer(String),

    // model
    #[error("model: invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("model: missing input stream `{0}`")]
    MissingStream(&'static str),
    #[error("model: corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    // features
    #[error("features: {0}")]
    Feature(String),
    #[error("features: zero standard deviation for feature `{0}`")]
    ZeroStd(&'static str),

    // training
    #[error("training: {0}")]
    Training(String),
    #[error("training: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    // evaluation
    #[error("evaluation: AUC is undefined when only one class is present")]
    UndefinedAuc,
    #[error("evaluation: {0}")]
    Evaluation(String),

    // data
    #[error("data: {path}:{line}: {field}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
    #[error("data: {0}")]
    Data(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
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
