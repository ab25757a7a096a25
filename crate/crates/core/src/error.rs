use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// No strictly increasing path from vertex 1 to vertex L emits the target.
    #[error("target of length {target_len} is infeasible on a lattice with {graph_size} vertices")]
    InfeasibleTarget { target_len: usize, graph_size: usize },

    #[error("lattice has no hidden states (hidden_dim = 0)")]
    MissingHiddenStates,

    #[error("enumeration cap exceeded: graph_size {graph_size} > cap {cap}")]
    CapExceeded { graph_size: usize, cap: usize },

    #[error("token {token} at position {position} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        position: usize,
        token: usize,
        vocab_size: usize,
    },

    #[error("target sequence is empty")]
    EmptyTarget,

    #[error("invalid vertex path: {0}")]
    InvalidPath(String),

    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{what}: shapes differ ({left:?} vs {right:?})")]
    ShapeMismatch {
        what: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("state rows ({states}) do not match duration plan length ({durations})")]
    LengthMismatch { states: usize, durations: usize },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dimension(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
