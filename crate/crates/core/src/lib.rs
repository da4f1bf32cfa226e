//! Reflected BSDEs on discrete path lattices with obstacles that need not
//! be right-continuous, the associated nonlinear-expectation optimal
//! stopping problem, and executable checks of the structural identities
//! (Skorokhod conditions, Mertens decomposition, comparison, contraction,
//! change-of-variables).
//!
//! Modules:
//! * [`lattice`] — the discrete filtration (binary path tree, optional
//!   Poisson branch), conditional expectation and martingale representation;
//! * [`expectation`] — drivers and f-conditional expectations by backward
//!   induction, beta-norms;
//! * [`rbsde`] — the reflected solver, Picard diagnostics, decomposition and
//!   estimate checkers;
//! * [`stopping`] — optimal stopping values, (epsilon-)optimal rules, and the
//!   brute-force enumeration oracle.

pub mod error;
pub mod expectation;
pub mod lattice;
pub mod rbsde;
pub mod rng;
pub mod stopping;

pub use error::{Error, Result};
pub use expectation::{
    beta_norm_squared, check_jump_monotonicity, f_expectation, solve_bsde, validate_driver,
    BetaNormFlavor, BSDESolution, DependsOn, Driver, DriverKind, DriverValidation,
    JumpMonotonicitySpec,
};
pub use lattice::{
    build_lattice, conditional_expectation, galchouk_lenglart_check, martingale_component,
    validate_ladlag, AdaptedProcess, Branch, DiscreteSemimartingale, LadlagProcess, LatticeModel,
    Mode, NodeId, TimeGrid,
};
pub use rbsde::{
    apriori_z_check, check_skorokhod, compare_solutions, mertens_decompose, solution_csv,
    solve_rbsde, solve_rbsde_deterministic, solve_rbsde_frozen, AprioriZCheck, BetaSpec,
    ComparisonInstance, ComparisonReport, DeterministicSolution, MertensDecomposition,
    PicardDiagnostics, RBSDESolution, SkorokhodReport, SolverParams,
};
pub use stopping::{
    brute_force_argmax, brute_force_value, check_optimality, check_strong_supermartingale,
    enumerate_stopping_times, epsilon_optimal_time, optimal_time, snell_minimality_check,
    value_and_risk, Certificate, OptimalityCheck, SnellCheck, StoppingReport, StoppingRule,
    SupermartingaleCheck,
};
