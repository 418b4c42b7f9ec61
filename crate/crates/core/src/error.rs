use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("alignment error: {what}: expected {expected}, found {found}")]
    Alignment {
        what: String,
        expected: String,
        found: String,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::State(_) => "state",
            Error::Alignment { .. } => "alignment",
            Error::NonFinite { .. } => "non_finite",
        }
    }

    pub(crate) fn alignment(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Alignment {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
