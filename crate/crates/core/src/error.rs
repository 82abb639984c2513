use std::path::PathBuf;

use crate::decoder::PassKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite cost {value} at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize, value: f64 },

    #[error("{0:?} pass received an empty query set")]
    EmptyQuerySet(PassKind),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset line failed to parse. `line` is 1-based, `offset` is the byte
    /// offset of the start of that line.
    #[error("line {line} (scene {scene}, byte offset {offset}): {message}")]
    Parse {
        line: usize,
        scene: usize,
        offset: usize,
        message: String,
    },

    #[error("version mismatch: expected \"{expected}\", found \"{found}\"")]
    VersionMismatch { expected: String, found: String },

    #[error(transparent)]
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
