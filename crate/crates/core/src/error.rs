use std::path::PathBuf;

use artkit_geometry::GeometryError;
use artkit_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error{}: {msg}", if .path.is_empty() { String::new() } else { format!(" at `{}`", .path) })]
    Parse { path: String, msg: String },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing {what} at {path}; produce it with `artkit {producer}`")]
    Missing {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{what} is stale (expected {expected}, found {found}); rerun `artkit {producer}`")]
    Stale {
        what: &'static str,
        expected: String,
        found: String,
        producer: &'static str,
    },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("no geometry for {0}")]
    EmptyGeometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse {
            path: String::new(),
            msg: msg.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::parse(e.to_string())
    }
}
