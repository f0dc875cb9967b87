use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    /// The operation needs a compact feasible set (finite diameter).
    #[error("feasible set is not compact: {0}")]
    NonCompact(&'static str),

    #[error("graph is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid weight matrix: {0}")]
    Weights(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A failure inside a round, tagged with the agent and round it happened in.
    #[error("agent {agent}, round {round}: {source}")]
    Step {
        agent: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {what} at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension {
                what,
                expected,
                got,
            })
        }
    }
}
