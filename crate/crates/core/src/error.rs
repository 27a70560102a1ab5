use thiserror::Error;

use crate::cluster_map::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid capacity {0}: must be finite and > 0")]
    InvalidCapacity(f64),

    #[error("invalid capacity unit {0}: must be finite and > 0")]
    InvalidUnit(f64),

    #[error("node {0} is already present")]
    DuplicateNode(NodeId),

    #[error("node {0} not found")]
    NodeNotFound(NodeId),

    #[error("cluster map has no segments")]
    EmptyMap,

    #[error("requested {requested} distinct nodes but only {available} exist")]
    InsufficientNodes { requested: usize, available: usize },

    #[error("number source ran out before a placement was found")]
    NumbersExhausted,

    #[error("no unassigned anterior number found within {0} range doublings")]
    ExtensionLimit(u32),

    #[error("degenerate map: hole length {hole} must be smaller than extent {extent}")]
    DegenerateMap { extent: f64, hole: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("map file line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
