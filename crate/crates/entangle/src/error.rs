//! Error taxonomy shared by all engine modules.

use thiserror::Error;

use crate::graph::NodeId;

/// Any failure the engine can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The graph contains a directed cycle; the payload names one.
    #[error("graph contains a cycle: {}", format_cycle(.0))]
    CycleDetected(Vec<NodeId>),
    /// An edge endpoint does not correspond to any declared node.
    #[error("edge ({0}, {1}) references an undeclared node")]
    DanglingEdge(NodeId, NodeId),
    /// Two nodes share an id.
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    /// Internal bug guard: a parent output was absent during input assembly.
    #[error("missing output of parent {parent} while assembling input for {node}")]
    MissingParentOutput { node: NodeId, parent: NodeId },
    /// A node's trainer could not produce a model.
    #[error("trainer failed at node {node}: {reason}")]
    TrainerFailed { node: NodeId, reason: String },
    /// A model or parameter vector does not fit the hypothesis family.
    #[error("incompatible hypothesis family: {0}")]
    IncompatibleFamily(String),
    /// An input tuple has the wrong number of components.
    #[error("input arity {got} does not match expected arity {want}")]
    ArityMismatch { want: usize, got: usize },
    /// A table model was queried outside its finite domain.
    #[error("input {0:?} is not a key of the table domain")]
    UnknownTableKey(Vec<f64>),
    /// An example carries no target for the evaluated task.
    #[error("example lacks a target for task {0}")]
    MissingTargets(NodeId),
    /// A distribution with no support points.
    #[error("distribution support is empty")]
    EmptySupport,
    /// An upstream-candidate scan received nothing to scan.
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    /// The update request names a node that is not in the graph.
    #[error("update target {0} not found in graph")]
    TargetNotFound(NodeId),
    /// The update replacement cannot be installed at the target.
    #[error("incompatible replacement for {node}: {reason}")]
    IncompatibleReplacement { node: NodeId, reason: String },
    /// A node references a dataset name missing from the registry.
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    /// A node references a family name missing from the registry.
    #[error("unknown hypothesis family {0:?}")]
    UnknownFamily(String),
    /// Masses or support failed distribution validation.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    /// A dataset failed validation (empty, ragged, …).
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    /// A configuration document failed schema or semantic validation.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    /// A scenario ran to completion but a declared expected effect failed.
    #[error("expected effect violated: {0}")]
    ExpectedEffectViolated(String),
}

fn format_cycle(cycle: &[NodeId]) -> String {
    let names: Vec<&str> = cycle.iter().map(|n| n.as_str()).collect();
    names.join(" -> ")
}

pub type Result<T> = std::result::Result<T, Error>;
