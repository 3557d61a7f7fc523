use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoevoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoevoError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
}

impl CoevoError {
    pub(crate) fn shape(op: &'static str, left: [usize; 2], right: [usize; 2]) -> Self {
        CoevoError::Shape { op, left, right }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoevoError::Io {
            path: path.into(),
            source,
        }
    }
}
