use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line} (byte {offset}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        offset: u64,
        message: String,
    },

    /// A record or argument violates a documented invariant.
    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: HTTP {status}: {body}")]
    Protocol { status: u16, body: String },

    /// Teacher output could not be interpreted as the requested format.
    #[error("unparseable teacher output: {0}")]
    TeacherOutput(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code for the command line: 1 usage, 2 data, 3 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Transport(_) | Error::Protocol { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } | Error::Invalid(_) | Error::TeacherOutput(_) => 2,
        }
    }
}
