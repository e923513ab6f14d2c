use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self loop on `{0}`")]
    SelfLoop(String),
    #[error("outcome `{0}` has outgoing edges; outcomes must be sinks")]
    OutcomeNotSink(String),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("parent set of `{node}` is collinear")]
    RankDeficient { node: String },
    #[error("node `{node}` has degenerate (zero) residual variance")]
    DegenerateVariance { node: String },
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node `{node}` has the wrong kind for this operation")]
    KindMismatch { node: String },
    #[error("invalid conditional CDF: {0}")]
    InvalidCdf(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: expected {expected} rows, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("column name `{0}` already exists")]
    NameCollision(String),
    #[error("graph has no outcome nodes")]
    NoOutcomeNodes,
    #[error("scores were computed over different node sets")]
    NonComparableScores,
    #[error("node sets differ: {0}")]
    NodeSetMismatch(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConstraints(_) | InvalidConfig(_) | NameCollision(_) | UnknownNode(_)
            | DuplicateNode(_) | NonComparableScores | NodeSetMismatch(_) => ErrorClass::Config,
            CycleDetected(_) | DuplicateEdge(..) | SelfLoop(_) | OutcomeNotSink(_)
            | InvalidData(_) | Parse { .. } | KindMismatch { .. } | ShapeMismatch { .. }
            | MissingArtifact(_) | Io(_) | Json(_) | NoOutcomeNodes => ErrorClass::Data,
            RankDeficient { .. } | DegenerateVariance { .. } | InvalidCdf(_)
            | DegenerateInput(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
