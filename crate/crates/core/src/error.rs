//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate passage id {0:?}")]
    DuplicatePassage(String),

    #[error("empty collection")]
    EmptyCollection,

    #[error("index file {path}: {msg}")]
    IndexFormat { path: PathBuf, msg: String },

    #[error("missing {role}: {path}")]
    MissingArtifact { role: &'static str, path: PathBuf },

    #[error("config: {0}")]
    Config(String),

    #[error("llm transport: {0}")]
    Transport(String),

    #[error("llm response: {0}")]
    LlmResponse(String),

    #[error("reranker: {0}")]
    Rerank(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl std::fmt::Display, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
