use thiserror::Error;

/// Unified error type for every pipeline stage.
///
/// Variants carry the offending node or tensor name whenever one exists so
/// that CLI output stays actionable without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed at {subject}: {reason}")]
    Validation { subject: String, reason: String },

    #[error("graph contains a cycle: {0}")]
    Cycle(String),

    #[error("shape mismatch at node {node}: {reason}")]
    Shape { node: String, reason: String },

    #[error("non-differentiable operator {op} at node {node}")]
    NonDifferentiable { node: String, op: String },

    #[error("numeric error at node {node}: {reason}")]
    Numeric { node: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("capacity exceeded at level {level}: need {needed} bytes, have {capacity}")]
    Capacity {
        level: String,
        needed: u64,
        capacity: u64,
    },

    #[error("unknown tensor {0}")]
    UnknownTensor(String),

    #[error("emission failed for {subject}: {reason}")]
    Emission { subject: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
