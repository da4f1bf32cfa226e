//! Grid-refinement study: solve one scenario over a ladder of step counts
//! and report the error against the best available reference.

use serde::Serialize;

use rbsde_core::expectation::DriverKind;
use rbsde_core::lattice::NodeId;
use rbsde_core::rbsde::{solve_rbsde, solve_rbsde_deterministic};

use crate::config::{table_obstacle_levels, ScenarioConfig};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub y0: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub reference: f64,
    /// "closed_form" or "finest_grid".
    pub reference_kind: String,
}

pub fn convergence_study(
    config: &ScenarioConfig,
    grid_sizes: &[usize],
) -> Result<ConvergenceStudy, CliError> {
    if grid_sizes.is_empty() {
        return Err(CliError::Config("the grid list is empty".into()));
    }
    let driver = config.build_driver()?;
    let horizon = config.grid.horizon;
    for &n in grid_sizes {
        let grid = rbsde_core::lattice::TimeGrid::new(horizon, n).map_err(CliError::validation)?;
        driver.check_step_contraction(grid.dt()).map_err(CliError::validation)?;
    }

    let mut y_values = Vec::with_capacity(grid_sizes.len());
    let mut any_push = false;
    let mut terminal_value = None;
    for &n in grid_sizes {
        match table_obstacle_levels(config, n)? {
            Some((point, right)) => {
                // Level-deterministic obstacle: O(N) fast path at any N.
                let grid = rbsde_core::lattice::TimeGrid::new(horizon, n)
                    .map_err(CliError::validation)?;
                let sol = solve_rbsde_deterministic(&grid, config.mode(), &driver, &point, &right)
                    .map_err(CliError::validation)?;
                any_push = any_push || sol.total_push() > 1e-12;
                terminal_value = Some(point[n]);
                y_values.push(sol.y[0]);
            }
            None => {
                // Path-dependent obstacle: full tree (node budget applies).
                let lattice = config.build_lattice_with_steps(n)?;
                let obstacle = config.build_obstacle(&lattice)?;
                let params = config.solver_params();
                let (sol, _) = solve_rbsde(&lattice, &driver, &obstacle, &params)
                    .map_err(CliError::solver)?;
                any_push = any_push || solution_has_push(&lattice, &sol);
                terminal_value = None;
                y_values.push(sol.y(NodeId::ROOT));
            }
        }
    }

    // Closed form e^{aT} * xi_T applies to zero/linear drivers with c = 0 on
    // deterministic obstacles that never bind.
    let closed_form = match (driver.kind(), terminal_value, any_push) {
        (DriverKind::Zero, Some(xi_t), false) => Some(xi_t),
        (DriverKind::Linear { a, c, .. }, Some(xi_t), false) if *c == 0.0 => {
            Some((a * horizon).exp() * xi_t)
        }
        _ => None,
    };
    let (reference, reference_kind) = match closed_form {
        Some(value) => (value, "closed_form".to_string()),
        None => {
            let finest = grid_sizes
                .iter()
                .zip(&y_values)
                .max_by_key(|(n, _)| **n)
                .map(|(_, y)| *y)
                .expect("nonempty");
            (finest, "finest_grid".to_string())
        }
    };

    let rows = grid_sizes
        .iter()
        .zip(&y_values)
        .map(|(n, y0)| ConvergenceRow { n: *n, y0: *y0, abs_error: (y0 - reference).abs() })
        .collect();
    Ok(ConvergenceStudy { rows, reference, reference_kind })
}

fn solution_has_push(
    lattice: &rbsde_core::lattice::LatticeModel,
    sol: &rbsde_core::rbsde::RBSDESolution,
) -> bool {
    (0..lattice.steps()).any(|k| {
        lattice
            .level_nodes(k)
            .any(|node| sol.delta_a_next(node) > 1e-12 || sol.delta_c(node) > 1e-12)
    })
}

/// The `converge` verb's CSV table.
pub fn study_csv(study: &ConvergenceStudy) -> String {
    let mut out = String::from("N,Y0,abs_error\n");
    for row in &study.rows {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", row.n, row.y0, row.abs_error));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;

    #[test]
    fn closed_form_reference_for_the_nonbinding_scenario() {
        let config = ScenarioConfig::from_json(
            r#"{
                "grid": {"T": 1.0, "N": 10},
                "driver": {"kind": "linear", "params": {"a": -1.0}},
                "obstacle": {"kind": "deterministic_table", "values": [-10.0, 1.0], "right_limits": [-10.0]}
            }"#,
        )
        .unwrap();
        let study = convergence_study(&config, &[10, 20]).unwrap();
        assert_eq!(study.reference_kind, "closed_form");
        assert!((study.reference - (-1.0f64).exp()).abs() < 1e-15);
        // Implicit Euler from above: Y0(N) = (1 + 1/N)^{-N}.
        let expected = (1.0 + 0.1f64).powi(-10);
        assert!((study.rows[0].y0 - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_driver_constant_obstacle_has_zero_error_everywhere() {
        let config = ScenarioConfig::from_json(
            r#"{
                "grid": {"T": 1.0, "N": 2},
                "driver": {"kind": "zero"},
                "obstacle": {"kind": "constant", "value": 1.0}
            }"#,
        )
        .unwrap();
        let study = convergence_study(&config, &[2, 8, 32]).unwrap();
        assert_eq!(study.reference_kind, "closed_form");
        assert_eq!(study.reference, 1.0);
        assert!(study.rows.iter().all(|r| r.abs_error == 0.0));
    }

    #[test]
    fn binding_scenarios_fall_back_to_the_finest_grid() {
        let config = ScenarioConfig::from_json(
            r#"{
                "grid": {"T": 1.0, "N": 2},
                "driver": {"kind": "zero"},
                "obstacle": {"kind": "constant", "value": 1.0, "right_jumps": [{"time_index": 1, "point": 2.0, "right_limit": 1.0}]}
            }"#,
        )
        .unwrap();
        let study = convergence_study(&config, &[2, 4]).unwrap();
        assert_eq!(study.reference_kind, "finest_grid");
    }

    #[test]
    fn precondition_checks_every_grid_size() {
        let config = ScenarioConfig::from_json(
            r#"{
                "grid": {"T": 1.0, "N": 10},
                "driver": {"kind": "custom:tanh_y", "params": {"scale": 0.8}},
                "obstacle": {"kind": "constant", "value": -1.0}
            }"#,
        )
        .unwrap();
        // K*dt = 0.8 at N = 1 trips the contraction guard.
        assert!(convergence_study(&config, &[1, 10]).is_err());
    }

    #[test]
    fn path_dependent_obstacles_use_the_tree_solver() {
        let config = ScenarioConfig::from_json(
            r#"{
                "grid": {"T": 1.0, "N": 4},
                "driver": {"kind": "zero"},
                "obstacle": {"kind": "functional", "payoff": "put", "strike": 0.5}
            }"#,
        )
        .unwrap();
        let study = convergence_study(&config, &[4, 8]).unwrap();
        assert_eq!(study.reference_kind, "finest_grid");
        assert_eq!(study.rows.len(), 2);
        assert_eq!(study.rows[1].abs_error, 0.0);
    }
}
