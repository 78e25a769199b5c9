use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node id {id} (graph has {num_nodes} nodes)")]
    UnknownNode { id: usize, num_nodes: usize },

    #[error("duplicate node id {0}")]
    DuplicateNode(usize),

    #[error("node ids must be dense 0..N-1, missing id {0}")]
    MissingNode(usize),

    #[error("invalid timestamp {value:?} for node {node}")]
    InvalidTimestamp { node: String, value: String },

    #[error("feature index {index} out of range for dimension {dim}")]
    FeatureIndex { index: usize, dim: usize },

    #[error("malformed input at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("loss mask selects no rows")]
    EmptyMask,

    #[error("no time differences")]
    EmptyHistogram,

    #[error("empty label sequence")]
    EmptyLabels,

    #[error("no task sequence derivable: {0}")]
    NoTaskSequence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unrecognized dataset layout in {dir}: missing {missing:?}")]
    UnrecognizedLayout { dir: PathBuf, missing: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
