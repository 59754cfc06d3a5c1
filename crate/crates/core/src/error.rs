use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed `.ecf` content; `offset` is the byte position of the problem.
    #[error("malformed dataset at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("malformed csv at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("non-finite at row {row}")]
    NonFinite { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0}")]
    InvalidParameter(String),

    /// Gaussian mechanism with zero noise: the privacy cost is unbounded.
    #[error("non-private: sigma = 0 gives unbounded privacy loss")]
    NonPrivate,

    #[error("invalid message: {0}")]
    Message(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Csv { .. } => "csv",
            Error::NonFinite { .. } => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NonPrivate => "non_private",
            Error::Message(_) => "message",
            Error::Json(_) => "json",
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// True for errors caused by bad arguments rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::NonPrivate => {
                true
            }
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

/// Attaches a protocol stage name to errors coming out of that stage.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
