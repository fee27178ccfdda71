use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown node label {0:?}")]
    UnknownLabel(String),
    #[error("wormhole endpoints {0} and {1} are already honest neighbours")]
    AdjacentEndpoints(NodeId, NodeId),
    #[error("distance-vector tables did not converge within {rounds} rounds")]
    NoConvergence { rounds: usize },
    #[error("scenario rejected: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
