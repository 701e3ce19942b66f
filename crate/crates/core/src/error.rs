use std::path::PathBuf;

use crate::numeric::ShapeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),

    #[error("token id {id} is out of range for a vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence too short: need at least {need} tokens, got {got}")]
    SequenceTooShort { need: usize, got: usize },

    #[error("non-finite training loss {loss} in epoch {epoch}, window {window} (tokens {start}..{end} of each stream)")]
    NonFiniteLoss {
        epoch: usize,
        window: usize,
        start: usize,
        end: usize,
        loss: f64,
    },

    #[error("text is empty")]
    EmptyText,

    #[error("missing corpus file {0}")]
    MissingFile(PathBuf),

    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("gradient check failed for {cell}: max relative error {max_rel_err:e} is not below {tol:e}")]
    GradcheckFailed { cell: String, max_rel_err: f64, tol: f64 },

    #[error("state bound violated: {0}")]
    BoundViolation(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::NonFiniteInput(_)
                | Error::BoundViolation(_)
                | Error::GradcheckFailed { .. }
        )
    }
}
