use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::GatewayError;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems found while loading or validating a corpus directory.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing corpus file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{locus}: malformed record: {message}")]
    Malformed {
        file: PathBuf,
        locus: String,
        message: String,
    },
    #[error("{file}:{locus}: unknown label id \"{label}\"")]
    UnknownLabel {
        file: PathBuf,
        locus: String,
        label: String,
    },
    #[error("{file}: table {table_id} is not rectangular (row {row} has {found} cells, expected {expected})")]
    NonRectangular {
        file: PathBuf,
        table_id: String,
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("table {table_id}: {message}")]
    Table { table_id: String, message: String },
}

/// Failure to interpret a model response.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no JSON object found in model response")]
    Unparseable { raw: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt file: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
