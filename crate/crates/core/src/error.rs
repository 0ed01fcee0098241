use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-length vector")]
    Normalization,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptySet(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("knowledge-base source unavailable after {attempts} attempt(s): {message}")]
    SourceUnavailable { attempts: u32, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("no faces gathered for entity {0}")]
    EmptySampleSet(String),

    #[error("reference strategy requested but entity {0} has no reference face")]
    MissingReference(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("cannot decode image {locator}: {message}")]
    Decode { locator: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}
