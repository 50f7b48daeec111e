use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arithmetic outside the operation's domain (e.g. inverting zero).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("insufficient shares: need {needed} distinct coded indices, got {got}")]
    InsufficientShares { needed: usize, got: usize },

    #[error("corrupt shares: coded packet {index} disagrees with the re-encoded solution")]
    Corruption { index: usize },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unknown catalog id `{0}`")]
    Lookup(String),

    #[error("no row assignment exists for active set {0}")]
    Infeasible(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("undecodable: {0}")]
    Undecodable(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
