//! Acceptance suite: every release-gating property, one test per criterion,
//! each printing a single pass/fail line (run with `-- --nocapture` to see
//! them). Tolerances are pinned here, not configurable.


use rbsde_core::expectation::{check_jump_monotonicity, f_expectation, Driver};
use rbsde_core::lattice::{galchouk_lenglart_check, LadlagProcess, NodeId};
use rbsde_core::rbsde::{
    apriori_z_check, check_skorokhod, compare_solutions, mertens_decompose, solve_rbsde,
    solve_rbsde_frozen, ComparisonInstance, SolverParams,
};
use rbsde_core::stopping::{
    brute_force_argmax, brute_force_value, check_optimality, check_strong_supermartingale,
    epsilon_optimal_time, value_and_risk, StoppingRule,
};
use rbsde_lab::config::ScenarioConfig;
use rbsde_lab::convergence::convergence_study;
use rbsde_lab::scenario::run_scenario;
use rbsde_lab::suite::{build_instance, lower_obstacle, SuiteParams};

const MASTER_SEED: u64 = 42;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!("criterion {criterion} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn diffusion_params(count: usize, depth: usize) -> SuiteParams {
    SuiteParams::new(MASTER_SEED, count, depth)
}

fn jumpy_params(count: usize, depth: usize) -> SuiteParams {
    let mut params = SuiteParams::new(MASTER_SEED ^ 0x5eed, count, depth);
    params.right_jump_fraction = 0.5;
    params.force_right_jumps = true;
    params
}

fn jump_mode_params(count: usize) -> SuiteParams {
    let mut params = SuiteParams::new(MASTER_SEED ^ 0xbeef, count, 3);
    params.jump_mode = true;
    params
}

fn all_drivers() -> Vec<Driver> {
    vec![Driver::zero(), Driver::linear(-1.0, 0.0, 0.0), Driver::abs_z(1.0, 0.0)]
}

/// The instance family of criterion 1: 100 seeded random obstacles on
/// depth-3 binary trees, each solved under all three registry drivers.
fn criterion_one_instances() -> Vec<(rbsde_core::lattice::LatticeModel, LadlagProcess)> {
    let params = diffusion_params(100, 3);
    (0..100u64)
        .map(|i| {
            let instance = build_instance(&params, i);
            (instance.lattice, instance.obstacle)
        })
        .collect()
}

#[test]
fn criterion_01_oracle_equivalence() {
    let started = std::time::Instant::now();
    let solver = SolverParams::default();
    let mut worst: f64 = 0.0;
    for (lattice, obstacle) in criterion_one_instances() {
        let root_rule = StoppingRule::immediate(&lattice);
        for driver in all_drivers() {
            let report = value_and_risk(&lattice, &driver, &obstacle, &root_rule, &solver)
                .expect("instances are solvable");
            let value = report.values[&NodeId::ROOT];
            assert_eq!(report.risks[&NodeId::ROOT], -value);
            let brute = brute_force_value(&lattice, &driver, &obstacle, &root_rule)
                .expect("depth 3 enumerates 26 rules");
            worst = worst.max((value - brute[&NodeId::ROOT]).abs());
        }
    }
    let elapsed = started.elapsed();
    verdict(
        "01 oracle equivalence",
        worst <= 1e-10 && elapsed.as_secs() < 30,
        &format!(
            "max |value - brute force| = {worst:.3e} over 100 instances x 3 drivers in {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_skorokhod_exactness() {
    let solver = SolverParams::default();
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    // Instances of criterion 1 ...
    for (lattice, obstacle) in criterion_one_instances() {
        for driver in all_drivers() {
            let (solution, _) = solve_rbsde(&lattice, &driver, &obstacle, &solver).unwrap();
            let report = check_skorokhod(&lattice, &solution, &obstacle);
            assert!(report.pass, "skorokhod violations: {:?}", report.violations);
            worst = worst.max(report.max_contact_gap);
            checked += 1;
        }
    }
    // ... plus 100 with injected right jumps.
    let params = jumpy_params(100, 3);
    for i in 0..100u64 {
        let instance = build_instance(&params, i);
        let (solution, _) =
            solve_rbsde(&instance.lattice, &instance.driver, &instance.obstacle, &solver).unwrap();
        let report = check_skorokhod(&instance.lattice, &solution, &instance.obstacle);
        assert!(report.pass, "skorokhod violations: {:?}", report.violations);
        worst = worst.max(report.max_contact_gap);
        checked += 1;
    }
    verdict(
        "02 skorokhod exactness",
        worst <= 1e-12,
        &format!("max contact gap {worst:.3e} over {checked} solves"),
    );
}

#[test]
fn criterion_03_right_jump_capture() {
    // The spike obstacle through the CLI path: worth 1 exactly at t_1.
    let config = ScenarioConfig::from_json(
        r#"{
            "grid": {"T": 1.0, "N": 2},
            "driver": {"kind": "zero"},
            "obstacle": {"kind": "deterministic_table", "values": [0.0, 1.0, 0.0], "right_limits": [0.0, 0.0]}
        }"#,
    )
    .unwrap();
    let outcome = run_scenario(&config).unwrap();
    let lattice = config.build_lattice().unwrap();
    let obstacle = config.build_obstacle(&lattice).unwrap();
    let (solution, _) =
        solve_rbsde(&lattice, &Driver::zero(), &obstacle, &SolverParams::default()).unwrap();

    let mut exact = outcome.report.y0 == 1.0;
    for k in 0..2 {
        for node in lattice.level_nodes(k) {
            exact &= solution.delta_a_next(node) == 0.0;
            exact &= solution.z(node) == 0.0;
        }
    }
    for node in lattice.level_nodes(2) {
        exact &= solution.c_cum(node) == 1.0;
        exact &= solution.a_cum(node) == 0.0;
    }
    for node in lattice.level_nodes(1) {
        exact &= solution.delta_c(node) == 1.0;
    }
    verdict(
        "03 right-jump capture",
        exact,
        &format!(
            "Y0 = {}, total C jump = {}, A and Z identically zero",
            outcome.report.y0,
            solution.c_cum(NodeId::new(2, 0))
        ),
    );
}

#[test]
fn criterion_04_comparison() {
    let solver = SolverParams::default();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100u64 {
        let depth = 2 + (i as usize % 5); // depths 2..=6
        let params = diffusion_params(100, depth);
        let mut instance = build_instance(&params, i);
        let dominated_driver = instance.driver.offset_by(-instance.rng.uniform(0.0, 0.5));
        let lowered = lower_obstacle(&instance.lattice, &instance.obstacle, &mut instance.rng);
        let (dominant_solution, _) =
            solve_rbsde(&instance.lattice, &instance.driver, &instance.obstacle, &solver).unwrap();
        let (dominated_solution, _) =
            solve_rbsde(&instance.lattice, &dominated_driver, &lowered, &solver).unwrap();
        let report = compare_solutions(
            &instance.lattice,
            ComparisonInstance {
                driver: &instance.driver,
                obstacle: &instance.obstacle,
                solution: &dominant_solution,
            },
            ComparisonInstance {
                driver: &dominated_driver,
                obstacle: &lowered,
                solution: &dominated_solution,
            },
            64,
            instance.derived_seed,
        )
        .expect("dominance holds by construction");
        assert!(report.pass, "instance {i}: excess {:e}", report.max_excess);
        worst = worst.max(report.max_excess);
    }
    verdict(
        "04 comparison",
        worst <= 1e-12,
        &format!("max Y2 - Y1 excess {worst:.3e} over 100 dominated pairs"),
    );
}

#[test]
fn criterion_05_picard_contraction() {
    // K <= 0.5, dt <= 0.1, auto-beta: every ratio < 1, convergence to 1e-9
    // within 50 iterations.
    let solver = SolverParams { tol: 1e-9, max_iter: 50, ..SolverParams::default() };
    let drivers = [
        Driver::linear(-0.5, 0.0, 0.0),
        Driver::abs_z(0.5, 0.0),
        Driver::linear(0.25, -0.25, 0.1),
        Driver::linear(0.4, 0.1, 0.0),
    ];
    let mut max_ratio: f64 = 0.0;
    let mut max_iterations = 0usize;
    let params = diffusion_params(50, 10); // dt = 0.1
    for i in 0..50u64 {
        let instance = build_instance(&params, i);
        let driver = &drivers[(i as usize) % drivers.len()];
        assert!(driver.lipschitz() <= 0.5);
        let (_, diagnostics) =
            solve_rbsde(&instance.lattice, driver, &instance.obstacle, &solver).unwrap();
        assert!(diagnostics.converged, "instance {i}: {diagnostics:?}");
        max_iterations = max_iterations.max(diagnostics.iterations);
        for ratio in &diagnostics.ratios {
            assert!(*ratio < 1.0, "instance {i}: ratio {ratio}");
            max_ratio = max_ratio.max(*ratio);
        }
    }
    verdict(
        "05 picard contraction",
        max_ratio < 1.0 && max_iterations <= 50,
        &format!("max ratio {max_ratio:.4}, max iterations {max_iterations} over 50 instances"),
    );
}

#[test]
fn criterion_06_apriori_z_estimate() {
    let mut worst_ratio: f64 = 0.0;
    for i in 0..100u64 {
        let depth = 2 + (i as usize % 5);
        let params = diffusion_params(100, depth);
        let mut instance = build_instance(&params, i);
        let lattice = &instance.lattice;
        let f1: Vec<Vec<f64>> = (0..lattice.steps())
            .map(|k| (0..lattice.nodes_at(k)).map(|_| instance.rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let f2: Vec<Vec<f64>> = (0..lattice.steps())
            .map(|k| (0..lattice.nodes_at(k)).map(|_| instance.rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let sol1 = solve_rbsde_frozen(lattice, &f1, &instance.obstacle).unwrap();
        let sol2 = solve_rbsde_frozen(lattice, &f2, &instance.obstacle).unwrap();
        let check = apriori_z_check(lattice, &sol1, &sol2, 1.0, 1.0).unwrap();
        assert!(check.pass, "instance {i}: lhs {:e} rhs {:e}", check.lhs, check.rhs);
        if check.rhs > 0.0 {
            worst_ratio = worst_ratio.max(check.lhs / check.rhs);
        }
    }
    verdict(
        "06 a-priori Z-estimate",
        worst_ratio <= 1.05,
        &format!("max lhs/rhs = {worst_ratio:.4} (slack allows 1.05) over 100 frozen pairs"),
    );
}

#[test]
fn criterion_07_epsilon_optimality() {
    let solver = SolverParams::default();
    let mut worst_slack = f64::INFINITY;
    for (lattice, obstacle) in criterion_one_instances() {
        let root_rule = StoppingRule::immediate(&lattice);
        for driver in all_drivers() {
            let (solution, _) = solve_rbsde(&lattice, &driver, &obstacle, &solver).unwrap();
            let l_factor = (driver.lipschitz() * lattice.grid().horizon()).exp();
            for epsilon in [0.5, 0.1, 0.01] {
                let rule = epsilon_optimal_time(&lattice, &solution, &obstacle, &root_rule, epsilon);
                let payoff = rule.payoff_at_stop(&lattice, &obstacle);
                let achieved = f_expectation(&lattice, &driver, &root_rule, &rule, &payoff)
                    .unwrap()[&NodeId::ROOT];
                let slack = achieved - (solution.y(NodeId::ROOT) - l_factor * epsilon);
                worst_slack = worst_slack.min(slack);
                assert!(
                    slack >= -1e-12,
                    "eps {epsilon}: achieved {achieved} < Y0 - L*eps by {slack:e}"
                );
            }
        }
    }
    verdict(
        "07 epsilon-optimality",
        worst_slack >= -1e-12,
        &format!("min slack of E^f(xi_tau_eps) over Y0 - L*eps: {worst_slack:.3e}"),
    );
}

#[test]
fn criterion_08_optimality_criterion_round_trip() {
    let solver = SolverParams::default();
    let mut argmax_checked = 0usize;
    let mut terminal_rejections = 0usize;
    for (lattice, obstacle) in criterion_one_instances() {
        let root_rule = StoppingRule::immediate(&lattice);
        for driver in all_drivers() {
            let (solution, _) = solve_rbsde(&lattice, &driver, &obstacle, &solver).unwrap();
            let (_, argmax_rule) =
                brute_force_argmax(&lattice, &driver, &obstacle, &root_rule, NodeId::ROOT).unwrap();
            let check =
                check_optimality(&lattice, &driver, &obstacle, &solution, &argmax_rule, &root_rule)
                    .unwrap();
            assert!(check.pass, "argmax rule failed: {:?}", check.failure);
            argmax_checked += 1;

            let terminal = StoppingRule::terminal_only(&lattice);
            let payoff = terminal.payoff_at_stop(&lattice, &obstacle);
            let terminal_value =
                f_expectation(&lattice, &driver, &root_rule, &terminal, &payoff).unwrap()
                    [&NodeId::ROOT];
            if solution.y(NodeId::ROOT) > terminal_value + 1e-10 {
                let check =
                    check_optimality(&lattice, &driver, &obstacle, &solution, &terminal, &root_rule)
                        .unwrap();
                assert!(!check.pass, "terminal rule accepted although strictly improvable");
                terminal_rejections += 1;
            }
        }
    }
    verdict(
        "08 optimality criterion round-trip",
        argmax_checked == 300 && terminal_rejections > 0,
        &format!(
            "argmax passed on {argmax_checked} solves; terminal rule rejected on {terminal_rejections} strictly-improvable ones"
        ),
    );
}

#[test]
fn criterion_09_decomposition_round_trip() {
    let solver = SolverParams::default();
    let mut worst: f64 = 0.0;
    let mut rejections = 0usize;
    let mut battery = Vec::new();
    for (lattice, obstacle) in criterion_one_instances() {
        battery.push((lattice, obstacle));
    }
    let params = jumpy_params(100, 3);
    for i in 0..100u64 {
        let instance = build_instance(&params, i);
        battery.push((instance.lattice, instance.obstacle));
    }
    for (lattice, obstacle) in &battery {
        for driver in all_drivers() {
            let (solution, _) = solve_rbsde(lattice, &driver, obstacle, &solver).unwrap();
            let value_process = solution.value_process(lattice);
            let decomposition = mertens_decompose(lattice, &driver, &value_process).unwrap();
            for k in 0..lattice.steps() {
                for node in lattice.level_nodes(k) {
                    worst = worst
                        .max((decomposition.z[k][node.index] - solution.z(node)).abs())
                        .max(
                            (decomposition.delta_a_next[k][node.index]
                                - solution.delta_a_next(node))
                            .abs(),
                        )
                        .max(
                            (decomposition.delta_c[k][node.index] - solution.delta_c(node)).abs(),
                        );
                }
            }
            // Negated solutions with a strict push must be rejected.
            let total_push: f64 = (0..lattice.steps())
                .flat_map(|k| lattice.level_nodes(k))
                .map(|node| solution.delta_a_next(node) + solution.delta_c(node))
                .sum();
            if total_push > 1e-9 {
                let negated_point: Vec<Vec<f64>> = solution
                    .y_levels()
                    .iter()
                    .map(|level| level.iter().map(|v| -v).collect())
                    .collect();
                let negated_right: Vec<Vec<f64>> = solution
                    .y_plus_levels()
                    .iter()
                    .map(|level| level.iter().map(|v| -v).collect())
                    .collect();
                let negated = LadlagProcess::new(lattice, negated_point, negated_right).unwrap();
                let check = check_strong_supermartingale(lattice, &driver, &negated);
                assert!(!check.pass, "negated pushed solution accepted");
                rejections += 1;
            }
        }
    }
    verdict(
        "09 decomposition round-trip",
        worst <= 1e-12 && rejections > 0,
        &format!(
            "max recovery gap {worst:.3e} over {} solves; {rejections} negations rejected",
            battery.len() * 3
        ),
    );
}

#[test]
fn criterion_10_galchouk_lenglart_identity() {
    let solver = SolverParams::default();
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    let mut run = |lattice: &rbsde_core::lattice::LatticeModel,
                   driver: &Driver,
                   obstacle: &LadlagProcess| {
        let (solution, _) = solve_rbsde(lattice, driver, obstacle, &solver).unwrap();
        let semimartingale = solution.to_semimartingale(lattice);
        for beta in [0.0, 2.0] {
            let residual = galchouk_lenglart_check(lattice, &semimartingale, beta).unwrap();
            worst = worst.max(residual);
        }
        count += 1;
    };
    for (lattice, obstacle) in criterion_one_instances() {
        for driver in all_drivers() {
            run(&lattice, &driver, &obstacle);
        }
    }
    let params = jumpy_params(100, 3);
    for i in 0..100u64 {
        let instance = build_instance(&params, i);
        run(&instance.lattice, &instance.driver, &instance.obstacle);
    }
    let jump_params = jump_mode_params(100);
    for i in 0..100u64 {
        let instance = build_instance(&jump_params, i);
        run(&instance.lattice, &instance.driver, &instance.obstacle);
    }
    verdict(
        "10 discrete change-of-variables identity",
        worst <= 1e-10,
        &format!("max residual {worst:.3e} over {count} solves at beta in {{0, 2}}"),
    );
}

#[test]
fn criterion_11_linear_driver_convergence() {
    let config = ScenarioConfig::from_json(
        r#"{
            "grid": {"T": 1.0, "N": 10},
            "driver": {"kind": "linear", "params": {"a": -1.0}},
            "obstacle": {"kind": "deterministic_table", "values": [-10.0, 1.0], "right_limits": [-10.0]}
        }"#,
    )
    .unwrap();
    let study = convergence_study(&config, &[10, 20, 40, 80]).unwrap();
    assert_eq!(study.reference_kind, "closed_form");
    assert!((study.reference - (-1.0f64).exp()).abs() < 1e-15);
    let errors: Vec<f64> = study.rows.iter().map(|r| r.abs_error).collect();
    let mut ratios = Vec::new();
    let mut ok = true;
    for pair in errors.windows(2) {
        ok &= pair[1] < pair[0];
        let ratio = pair[0] / pair[1];
        ok &= (1.7..=2.3).contains(&ratio);
        ratios.push(ratio);
    }
    let error_text: Vec<String> = errors.iter().map(|e| format!("{e:.3e}")).collect();
    let ratio_text: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    verdict(
        "11 linear-driver convergence",
        ok,
        &format!("errors [{}] with consecutive ratios [{}]", error_text.join(", "), ratio_text.join(", ")),
    );
}

#[test]
fn criterion_12_jump_mode() {
    let solver = SolverParams::default();
    let params = jump_mode_params(100);
    // The registry jump driver satisfies the monotonicity assumption.
    let lambda = 0.6; // depth 3, lambda * dt = 0.2
    let driver = Driver::jump_linear(-0.3, 0.2, 0.5, lambda);
    let monotonicity = check_jump_monotonicity(
        &driver,
        driver.monotonicity().expect("registry driver carries its slope spec"),
        lambda,
        512,
        MASTER_SEED,
    );
    assert!(monotonicity.ok, "{:?}", monotonicity.violations);

    let mut oracle_worst: f64 = 0.0;
    let mut skorokhod_worst: f64 = 0.0;
    let mut comparison_worst = f64::NEG_INFINITY;
    for i in 0..100u64 {
        let mut instance = build_instance(&params, i);
        assert!(instance.lattice.jump_intensity() * instance.lattice.dt() <= 0.2 + 1e-15);
        let (solution, _) =
            solve_rbsde(&instance.lattice, &instance.driver, &instance.obstacle, &solver).unwrap();

        // (1) oracle equivalence from t_1: remaining depth 2, 3-ary.
        let base = StoppingRule::at_level(&instance.lattice, 1);
        let brute =
            brute_force_value(&instance.lattice, &instance.driver, &instance.obstacle, &base)
                .unwrap();
        for (node, value) in &brute {
            oracle_worst = oracle_worst.max((value - solution.y(*node)).abs());
        }

        // (2) Skorokhod exactness.
        let skorokhod = check_skorokhod(&instance.lattice, &solution, &instance.obstacle);
        assert!(skorokhod.pass);
        skorokhod_worst = skorokhod_worst.max(skorokhod.max_contact_gap);

        // (4) comparison on a dominated jump pair.
        let dominated_driver = instance.driver.offset_by(-instance.rng.uniform(0.0, 0.5));
        let lowered = lower_obstacle(&instance.lattice, &instance.obstacle, &mut instance.rng);
        let (dominated_solution, _) =
            solve_rbsde(&instance.lattice, &dominated_driver, &lowered, &solver).unwrap();
        let report = compare_solutions(
            &instance.lattice,
            ComparisonInstance {
                driver: &instance.driver,
                obstacle: &instance.obstacle,
                solution: &solution,
            },
            ComparisonInstance {
                driver: &dominated_driver,
                obstacle: &lowered,
                solution: &dominated_solution,
            },
            64,
            instance.derived_seed,
        )
        .unwrap();
        assert!(report.pass, "instance {i}: excess {:e}", report.max_excess);
        comparison_worst = comparison_worst.max(report.max_excess);
    }
    verdict(
        "12 jump mode",
        oracle_worst <= 1e-10 && skorokhod_worst <= 1e-12 && comparison_worst <= 1e-12,
        &format!(
            "oracle gap {oracle_worst:.3e}, skorokhod gap {skorokhod_worst:.3e}, comparison excess {comparison_worst:.3e} over 100 instances"
        ),
    );
}

/// Consistency of the reported value with the solution dump (not a numbered
/// criterion; keeps the two CLI artifacts honest against each other).
#[test]
fn report_and_csv_agree() {
    let config = ScenarioConfig::from_json(
        r#"{
            "grid": {"T": 1.0, "N": 3},
            "driver": {"kind": "abs_z"},
            "obstacle": {"kind": "random", "seed": 9, "bounds": [-1.0, 1.0]}
        }"#,
    )
    .unwrap();
    let outcome = run_scenario(&config).unwrap();
    let first_row = outcome.solution_csv.lines().nth(1).unwrap();
    let y0_field: f64 = first_row.split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(y0_field, outcome.report.y0);
}
