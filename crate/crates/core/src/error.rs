use thiserror::Error;

use crate::tensor::TensorError;

/// Malformed binary input (feature files, checkpoints).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file truncated at byte {offset}: needed {needed} more bytes for {what}")]
    Truncated {
        offset: usize,
        needed: usize,
        what: &'static str,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid value at byte {offset}: {reason}")]
    Value { offset: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("training produced a non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("Langevin iterate became non-finite at level {level}, step {step}")]
    NonFiniteIterate { level: usize, step: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Tensor(TensorError::NonFinite { .. }) => false,
            Error::Tensor(_) | Error::Invalid { .. } | Error::Format(_) => true,
            Error::NonFiniteLoss { .. } | Error::NonFiniteIterate { .. } => false,
            Error::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidInput
            ),
        }
    }
}
