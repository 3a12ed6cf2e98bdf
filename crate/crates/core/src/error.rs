use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op} expects a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: (usize, usize) },
    #[error("zero-norm input to {0}")]
    ZeroNorm(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown node {node} (stream has {num_nodes} nodes)")]
    UnknownNode { node: usize, num_nodes: usize },
    #[error("stream of {0} events is too small to split (need at least 100)")]
    SplitTooSmall(usize),
    #[error("negative pool exhausted for node {node} at t={t}")]
    PoolExhausted { node: usize, t: f64 },
    #[error("task sampling failed: {0}")]
    Sampling(String),
    #[error("empty class {0} in support set")]
    EmptyClass(i64),
    #[error("empty score list: {0}")]
    EmptyScores(&'static str),
    #[error("non-finite loss {value} at {context}")]
    NonFinite { value: f64, context: String },
    #[error("checkpoint field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid config `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
