//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("malformed line {line} in {path}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("shape mismatch for {what}: declared {declared}, found {found}")]
    ShapeMismatch {
        what: String,
        declared: String,
        found: String,
    },

    #[error("dangling edge index in relation ({src}, {rel}, {dst}): {side} index {index} >= {count}")]
    DanglingEdge {
        src: String,
        rel: String,
        dst: String,
        side: String,
        index: usize,
        count: usize,
    },

    #[error("unknown node type {0:?}")]
    UnknownNodeType(String),

    #[error("invalid center node ({0:?}, {1})")]
    InvalidCenter(String, usize),

    #[error("label {value} out of range for {ty} with {classes} classes")]
    LabelOutOfRange {
        ty: String,
        value: i64,
        classes: usize,
    },

    #[error("not enough labeled nodes: need {needed}, have {available}")]
    NotEnoughLabeled { needed: usize, available: usize },

    #[error("schema descriptions do not cover {kind} {key:?}")]
    MissingDescription { kind: String, key: String },

    #[error("empty description list for {0:?}")]
    EmptyDescriptions(String),

    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("zero-norm row {0} cannot be normalized")]
    ZeroNormRow(usize),

    #[error("placeholder count mismatch: question has {in_question} <graph> markers, {bound} blocks bound")]
    PlaceholderMismatch { in_question: usize, bound: usize },

    #[error("context overflow: sequence needs {required} positions, model allows {available}")]
    ContextOverflow { required: usize, available: usize },

    #[error("empty loss mask: no target positions to score")]
    EmptyLossMask,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),

    #[error("unknown prompt style {0:?}")]
    UnknownStyle(String),

    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },

    #[error("llm client error: {0}")]
    Client(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
