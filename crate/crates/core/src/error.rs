use thiserror::Error;

use crate::lattice::NodeId;

/// Errors shared across the lattice, expectation, rbsde and stopping modules.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("jump probability overflow: lambda*dt = {0} must be < 1")]
    JumpProbabilityOverflow(f64),
    #[error("tree too large: {nodes} nodes exceeds the {max} node budget")]
    TreeTooLarge { nodes: u128, max: u128 },
    #[error("missing child value at node {0}")]
    MissingChildValue(NodeId),
    #[error("semimartingale does not reconstruct its path values at node {node}: residual {residual:e}")]
    InconsistentDecomposition { node: NodeId, residual: f64 },
    #[error("driver returned a non-finite value at sample (t={t}, y={y}, z={z})")]
    NonFiniteDriverValue { t: f64, y: f64, z: f64 },
    #[error("implicit step not contractive: K*dt = {0} must be < 1/2")]
    StepContractionFailure(f64),
    #[error("missing terminal value at stopped node {0}")]
    MissingTerminalValue(NodeId),
    #[error("stopping rules out of order: {0} stops before the earlier rule")]
    StoppingOrderViolation(NodeId),
    #[error("obstacle invalid: {0}")]
    ObstacleInvalid(String),
    #[error("Picard iteration diverging: ratio {ratio} >= 1 after {iterations} iterations")]
    PicardDivergence { ratio: f64, iterations: usize },
    #[error("not a strong supermartingale: {kind} increment {value:e} < 0 at node {node}")]
    NotSupermartingale {
        node: NodeId,
        kind: PushKind,
        value: f64,
    },
    #[error("solutions come from mismatched instances: {0}")]
    MismatchedInstances(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("stopping-time enumeration overflow: {count} rules exceeds {max}")]
    CountOverflow { count: u128, max: u128 },
}

/// Which push process a decomposition failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushKind {
    /// Predictable interval push (the A process).
    Interval,
    /// Right-jump push (the C process).
    RightJump,
}

impl std::fmt::Display for PushKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PushKind::Interval => write!(f, "dA"),
            PushKind::RightJump => write!(f, "dC"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
