use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("config key `{key}` (line {line}): {message}")]
    Config { key: String, line: usize, message: String },

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("output directory {0} already exists and is not empty (pass --overwrite to replace its contents)")]
    OutputExists(PathBuf),

    #[error("every seed failed")]
    AllSeedsFailed,

    #[error(transparent)]
    Core(#[from] mango_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_owned(),
            line,
            message: message.into(),
        }
    }
}
