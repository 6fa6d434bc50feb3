use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, clocks or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    /// A point lies outside the room or on its boundary.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("data error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}`{}: {source}", segment.map(|s| format!(" (segment {s})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        segment: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str, segment: Option<usize>) -> Self {
        Error::Stage {
            stage,
            segment,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::Index { .. } | Error::Geometry(_) => 2,
            Error::Data { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Stage { .. } => unreachable!("root() never returns a stage wrapper"),
        }
    }
}
