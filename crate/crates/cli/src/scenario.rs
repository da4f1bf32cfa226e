//! Single-scenario runs: solve, check, choose stopping rules, emit files.

use std::path::Path;

use rbsde_core::lattice::NodeId;
use rbsde_core::rbsde::{check_skorokhod, solution_csv, solve_rbsde};
use rbsde_core::stopping::{
    brute_force_value, check_optimality, default_l_factor, enumerate_stopping_times,
    epsilon_optimal_time, optimal_time, Certificate, StoppingRule,
};

use crate::config::{AutoOr, OracleChoice, ScenarioConfig};
use crate::report::{OracleSummary, ResolvedParams, RunReport, SkorokhodSummary, StoppingSummary};
use crate::CliError;

pub struct ScenarioOutcome {
    pub report: RunReport,
    pub solution_csv: String,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome, CliError> {
    let lattice = config.build_lattice()?;
    let driver = config.build_driver()?;
    driver
        .check_step_contraction(lattice.dt())
        .map_err(CliError::validation)?;
    let validation = rbsde_core::expectation::validate_driver(&driver, 256, 0x5eed)
        .map_err(CliError::validation)?;
    if !validation.ok {
        return Err(CliError::Validation(format!(
            "driver violates its declared Lipschitz bound: declared K = {}, sampled K = {:.6}",
            validation.declared_k, validation.empirical_k
        )));
    }
    let obstacle = config.build_obstacle(&lattice)?;
    let params = config.solver_params();

    let (solution, picard) =
        solve_rbsde(&lattice, &driver, &obstacle, &params).map_err(CliError::solver)?;

    let y0 = solution.y(NodeId::ROOT);
    let skorokhod = check_skorokhod(&lattice, &solution, &obstacle);
    let budget_residual = solution.budget_residual(&lattice);

    let root_rule = StoppingRule::immediate(&lattice);
    let epsilon = config.solver.epsilon;
    let l_factor = match config.solver.l_factor {
        AutoOr::Value(l) => l,
        AutoOr::Auto(_) => default_l_factor(driver.lipschitz(), lattice.grid().horizon()),
    };
    let tau_epsilon = epsilon_optimal_time(&lattice, &solution, &obstacle, &root_rule, epsilon);
    let tau_star = optimal_time(&lattice, &solution, &obstacle, &root_rule);
    let optimality =
        check_optimality(&lattice, &driver, &obstacle, &solution, &tau_star, &root_rule)
            .map_err(CliError::solver)?;
    let certificate = if optimality.pass {
        Certificate::Exact
    } else {
        Certificate::Epsilon { epsilon, l_factor }
    };

    let run_oracle = match config.solver.oracle {
        OracleChoice::Enabled => true,
        OracleChoice::Disabled => false,
        OracleChoice::Auto => enumerate_stopping_times(&lattice, &root_rule).is_ok(),
    };
    let oracle = if run_oracle {
        let rules = enumerate_stopping_times(&lattice, &root_rule)
            .map_err(CliError::validation)?
            .count();
        let best = brute_force_value(&lattice, &driver, &obstacle, &root_rule)
            .map_err(CliError::solver)?;
        let gap = (best[&NodeId::ROOT] - y0).abs();
        Some(OracleSummary { rule_count: rules, max_abs_gap: gap, pass: gap <= 1e-10 })
    } else {
        None
    };

    let report = RunReport {
        y0,
        risk: -y0,
        resolved: ResolvedParams {
            beta: picard.beta,
            l_factor,
            epsilon,
            tol: config.solver.tol,
            max_iter: config.solver.max_iter,
        },
        picard,
        skorokhod: SkorokhodSummary {
            pass: skorokhod.pass,
            max_contact_gap: skorokhod.max_contact_gap,
            violation_count: skorokhod.violations.len(),
        },
        budget_residual,
        stopping: StoppingSummary {
            tau_epsilon: tau_epsilon.to_words(&lattice),
            tau_star: tau_star.to_words(&lattice),
            certificate,
        },
        oracle,
    };
    let csv = solution_csv(&lattice, &obstacle, &solution);
    Ok(ScenarioOutcome { report, solution_csv: csv })
}

pub fn report_json(report: &RunReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// Full CLI behavior for `solve`: parse, run, write the output files.
pub fn run_scenario_from_path(path: &Path) -> Result<ScenarioOutcome, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = ScenarioConfig::from_json(&text)?;
    let outcome = run_scenario(&config)?;
    if let Some(csv_path) = &config.outputs.solution_csv {
        if let Some(parent) = csv_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(csv_path, &outcome.solution_csv)?;
    }
    if let Some(report_path) = &config.outputs.report_json {
        if let Some(parent) = report_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(report_path, report_json(&outcome.report))?;
    }
    Ok(outcome)
}
