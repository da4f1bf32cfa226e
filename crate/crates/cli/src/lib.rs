//! Scenario ingestion, experiment orchestration and report emission for the
//! lattice reflected-BSDE solver: single solves, convergence studies over a
//! grid ladder, and the seeded property suite.

pub mod config;
pub mod convergence;
pub mod report;
pub mod scenario;
pub mod suite;

use rbsde_core::Error as CoreError;

/// Exit code for validation failures (bad config, bad obstacle, bad grid).
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for solver failures (divergence, runtime numeric trouble).
pub const EXIT_SOLVER: i32 = 3;

/// CLI-level error with the exit-code classification.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Validation(String),
    Solver(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Solver(msg) => write!(f, "solver error: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }

    /// Classifies a core error: anything detectable from the inputs is a
    /// validation failure, runtime numeric trouble is a solver failure.
    pub fn validation(err: CoreError) -> Self {
        match err {
            CoreError::InvalidGrid(_)
            | CoreError::JumpProbabilityOverflow(_)
            | CoreError::TreeTooLarge { .. }
            | CoreError::ObstacleInvalid(_)
            | CoreError::StepContractionFailure(_)
            | CoreError::CountOverflow { .. }
            | CoreError::StoppingOrderViolation(_)
            | CoreError::MismatchedInstances(_)
            | CoreError::NonFiniteDriverValue { .. }
            | CoreError::HypothesisViolated(_) => CliError::Validation(err.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }

    pub fn solver(err: CoreError) -> Self {
        CliError::Solver(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

/// Worker cap: explicit argument, then RBSDE_LAB_THREADS, then the machine.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var("RBSDE_LAB_THREADS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
        .max(1)
}
