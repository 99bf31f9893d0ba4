//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Schema script could not be parsed. `offset` is the byte offset of the
    /// offending construct within the input script.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Two tables in one schema script share a canonical name.
    #[error("duplicate table name `{name}` in schema for `{db_id}`")]
    DuplicateTable { name: String, db_id: String },

    /// Tokenizer definition missing or invalid. Raised at load time, never
    /// while counting.
    #[error("tokenizer definition `{path}`: {reason}")]
    TokenizerInit { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("dataset layout error under `{root}`: expected {expected}")]
    DatasetLayout { root: PathBuf, expected: String },

    #[error("example `{example_id}` references unknown database `{db_id}`")]
    UnknownDb { example_id: String, db_id: String },

    /// A cached pool was produced with a different tokenizer than the one
    /// now active; counts would be inconsistent.
    #[error("pool built with tokenizer `{pool}` but active tokenizer is `{active}`")]
    PoolCounterMismatch { pool: String, active: String },

    /// The distractor pool cannot supply the token mass a placement or fill
    /// requires.
    #[error("distractor pool too small: required {required} tokens, available {available}")]
    PoolExhausted { required: usize, available: usize },

    /// `measure_offset` could not locate the original schema block.
    #[error("original schema block not found in prompt")]
    SchemaNotFound,

    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A multi-target run finished with some targets in error; details are in
    /// the written manifest.
    #[error("{failed} of {total} targets failed; details in {manifest}")]
    TargetsFailed {
        failed: usize,
        total: usize,
        manifest: PathBuf,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateTable { .. } => "duplicate-table",
            Error::TokenizerInit { .. } => "tokenizer-init",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::DatasetLayout { .. } => "dataset-layout",
            Error::UnknownDb { .. } => "unknown-db",
            Error::PoolCounterMismatch { .. } => "pool-counter-mismatch",
            Error::PoolExhausted { .. } => "pool-exhausted",
            Error::SchemaNotFound => "schema-not-found",
            Error::Sqlite(_) => "sqlite",
            Error::Config(_) => "config",
            Error::TargetsFailed { .. } => "targets-failed",
        }
    }
}
