use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("no usable records in input")]
    EmptyInput,

    #[error("graph is empty after filtering")]
    EmptyGraph,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("label `{label}` is used both as a fund and as an asset")]
    KindConflict { label: String },

    #[error("node `{0}` has no neighbors")]
    Isolated(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("corpus was generated for graph {expected}, current graph is {found}")]
    StaleCorpus { expected: String, found: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("vector for `{0}` has zero norm")]
    DegenerateVector(String),

    #[error("jaccard index of two empty sets is undefined")]
    EmptySets,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
