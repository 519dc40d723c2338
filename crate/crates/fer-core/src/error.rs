//! Error type shared across the crate.

use crate::data::EmotionClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{path}:{row}: {detail}")]
    CsvRow {
        path: String,
        row: usize,
        detail: String,
    },

    #[error("{path}: {detail}")]
    BadImage { path: String, detail: String },

    #[error("unknown class directory: {0}")]
    UnknownClassDir(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint truncated at byte {0}")]
    CheckpointTruncated(u64),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("class {class:?}: expected {expected} samples after merge, found {actual}")]
    CountMismatch {
        class: EmotionClass,
        expected: usize,
        actual: usize,
    },

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    Diverged { epoch: usize, batch: usize, lr: f32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
