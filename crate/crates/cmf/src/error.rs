use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Shape errors carry the name of the operation (or network layer) that
/// rejected its input together with a human-readable diagnostic, so failures
/// deep inside the pipeline can be traced to a stage.
#[derive(Debug, Error)]
pub enum CmfError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CmfError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("malformed data: {0}")]
    Format(String),
}

impl CmfError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CmfError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        CmfError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CmfError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CmfError::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        CmfError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CmfError>;
