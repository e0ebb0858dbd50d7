use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    /// A class has no confident samples, so its prototype cannot be formed.
    #[error("class {class} has no confident samples")]
    DegenerateClass { class: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("run aborted at epoch {epoch}: {source}")]
    Aborted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from the data rather than from the caller:
    /// an empty class or a zero-length embedding met during selection.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Error::DegenerateClass { .. } | Error::DegenerateGeometry(_) => true,
            Error::Aborted { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}
