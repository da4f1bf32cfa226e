//! Run-report schema. Field order is fixed so reports serialize
//! byte-identically for identical configs and seeds; wall-clock timing is
//! deliberately kept out (it goes to stderr).

use serde::Serialize;

use rbsde_core::rbsde::PicardDiagnostics;
use rbsde_core::stopping::Certificate;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub y0: f64,
    /// risk = -y0 exactly.
    pub risk: f64,
    pub resolved: ResolvedParams,
    pub picard: PicardDiagnostics,
    pub skorokhod: SkorokhodSummary,
    pub budget_residual: f64,
    pub stopping: StoppingSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
}

/// The "auto" knobs echoed back resolved, for reproducibility.
#[derive(Debug, Serialize)]
pub struct ResolvedParams {
    pub beta: f64,
    pub l_factor: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Serialize)]
pub struct SkorokhodSummary {
    pub pass: bool,
    pub max_contact_gap: f64,
    pub violation_count: usize,
}

#[derive(Debug, Serialize)]
pub struct StoppingSummary {
    /// Frontier path words of the epsilon-optimal rule.
    pub tau_epsilon: Vec<String>,
    /// Frontier path words of the hitting rule for {Y = xi}.
    pub tau_star: Vec<String>,
    pub certificate: Certificate,
}

#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub rule_count: usize,
    pub max_abs_gap: f64,
    pub pass: bool,
}
