use std::path::PathBuf;

use crate::llm::AgentRole;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Gateway,
    Sandbox,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}: no data rows")]
    NoData(PathBuf),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty partition: split gives train={train}, test={test}")]
    EmptyPartition { train: usize, test: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("rule not found: {0}")]
    RuleNotFound(String),

    #[error("rule id already exists in registry: {0}")]
    RuleCollision(String),

    #[error("sandbox unavailable: {0}")]
    Sandbox(String),

    #[error("gateway error: {0}")]
    Gateway(String),

    #[error("mock script has no response for {role} call #{index}")]
    MockUnderrun { role: AgentRole, index: usize },

    #[error("mock script left {remaining} unconsumed {role} response(s)")]
    MockUnconsumed { role: AgentRole, remaining: usize },

    #[error("template {template}: missing field `{field}`")]
    MissingField { template: String, field: String },

    #[error("template {template}: {message}")]
    Template { template: String, message: String },

    #[error("no extractable code block in response")]
    Extraction,

    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::NoData(_)
            | Error::Validation(_)
            | Error::LengthMismatch { .. }
            | Error::EmptyPartition { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::RuleNotFound(_)
            | Error::RuleCollision(_)
            | Error::Calibration(_) => ErrorKind::Data,
            Error::Gateway(_) | Error::MockUnderrun { .. } | Error::MockUnconsumed { .. } => {
                ErrorKind::Gateway
            }
            Error::Sandbox(_) => ErrorKind::Sandbox,
            Error::MissingField { .. } | Error::Template { .. } | Error::Extraction => {
                ErrorKind::Internal
            }
        }
    }
}

pub(crate) fn ensure_same_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
