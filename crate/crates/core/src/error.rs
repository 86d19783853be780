use thiserror::Error;

use crate::world::AwId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid model {0}: {1}")]
    InvalidModel(String, String),
    #[error("duplicate model label {0}")]
    DuplicateLabel(String),
    #[error("obj line {0}: {1}")]
    Obj(usize, String),
    #[error("invalid semantic map: {0}")]
    InvalidMap(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistogramError {
    #[error("histogram binnings differ")]
    BinningMismatch,
    #[error("histogram has no mass")]
    Empty,
    #[error("region of interest is empty")]
    EmptyRoi,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("unknown model label {0}")]
    UnknownLabel(String),
    #[error("unknown object id {0}")]
    UnknownId(AwId),
    #[error("artificial world unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("object {0} is not in the scene graph")]
    UnknownObject(u64),
    #[error("aw object {0} is already linked to another hypothesis")]
    AlreadyLinked(AwId),
    #[error("illegal status transition {0:?} -> {1:?}")]
    IllegalTransition(crate::scene::Status, crate::scene::Status),
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("the frame stream is empty")]
    EmptyStream,
    #[error(transparent)]
    Percept(#[from] crate::percept::PerceptError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario validation failed: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}
