use thiserror::Error;

use crate::engine::EngineError;

/// Validation failures raised while ingesting or constructing a market.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("tree has no nodes")]
    Empty,
    #[error("node ids must be 0..{expected}, found id {found}")]
    NodeIds { expected: usize, found: i64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("expected exactly one root, found {0}")]
    RootCount(usize),
    #[error("node {node} references unknown parent {parent}")]
    UnknownParent { node: usize, parent: i64 },
    #[error("node {0} is not reachable from the root")]
    Unreachable(usize),
    #[error("node {0} has no branch probability")]
    MissingProbability(usize),
    #[error("branch probability of node {node} is {prob}, must lie in (0, 1]")]
    Probability { node: usize, prob: f64 },
    #[error("conditional probabilities sum to {sum} at node {node}")]
    ProbabilitySum { node: usize, sum: f64 },
    #[error("nonpositive ask price at node {node} ({price})")]
    NonpositivePrice { node: usize, price: f64 },
    #[error("lambda {0} out of range [0, 1)")]
    LambdaOutOfRange(f64),
    #[error("leaves at unequal depths: leaf {leaf} at stage {depth}, expected {expected}")]
    UnequalLeafDepth { leaf: usize, depth: usize, expected: usize },
    #[error("tree must have at least one trading period")]
    NoPeriods,
    #[error("endowment entry for node {0}, which is not a leaf")]
    EndowmentNotLeaf(i64),
    #[error("duplicate endowment entry for leaf {0}")]
    DuplicateEndowment(usize),
    #[error("non-finite value {value} in field {field}")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("solver failure: {0}")]
    Engine(#[from] EngineError),
    #[error("no consistent price system at lambda = {lambda} (max-min slack {slack:.3e})")]
    NoConsistentPrice { lambda: f64, slack: f64 },
    #[error("initial wealth {x} does not exceed the threshold x0 = {x0}")]
    BelowThreshold { x: f64, x0: f64 },
    #[error("shadow price undefined at node {0}")]
    UndefinedShadow(usize),
    #[error("frictionless arbitrage at node {0}")]
    FrictionlessArbitrage(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("bracketing failed: {0}")]
    Bracketing(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
