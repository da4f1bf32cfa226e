//! Seeded property suite: every structural check the solver stack promises,
//! run over randomized instances, with deterministic reports and an optional
//! mutation hook that corrupts solutions to prove the checkers have teeth.

use std::collections::BTreeMap;

use serde::Serialize;

use rbsde_core::expectation::{check_jump_monotonicity, f_expectation, Driver};
use rbsde_core::lattice::{
    build_lattice, galchouk_lenglart_check, LadlagProcess, LatticeModel, Mode, NodeId, TimeGrid,
};
use rbsde_core::rbsde::{
    apriori_z_check, check_skorokhod, compare_solutions, mertens_decompose, solve_rbsde,
    solve_rbsde_frozen, ComparisonInstance, RBSDESolution, SolverParams,
};
use rbsde_core::rng::SplitMix64;
use rbsde_core::stopping::{
    brute_force_argmax, brute_force_value, check_optimality, check_strong_supermartingale,
    default_l_factor, epsilon_optimal_time, optimal_time, snell_minimality_check, StoppingRule,
};

use crate::config::random_obstacle;
use crate::resolve_threads;

/// Post-solve corruption used to verify the harness notices a broken solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    BiasRoot,
    DropRightJumps,
}

impl Mutation {
    pub fn from_id(id: &str) -> Option<Mutation> {
        match id {
            "bias_root" => Some(Mutation::BiasRoot),
            "drop_right_jumps" => Some(Mutation::DropRightJumps),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Mutation::BiasRoot => "bias_root",
            Mutation::DropRightJumps => "drop_right_jumps",
        }
    }

    fn apply(&self, solution: RBSDESolution) -> RBSDESolution {
        match self {
            Mutation::BiasRoot => solution.with_biased_root(1e-3),
            Mutation::DropRightJumps => solution.with_dropped_right_jumps(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteParams {
    pub seed: u64,
    pub count: usize,
    pub depth: usize,
    pub jump_mode: bool,
    /// Fraction of non-terminal nodes given a strict right jump.
    pub right_jump_fraction: f64,
    /// Force at least one strict right jump per instance.
    pub force_right_jumps: bool,
    pub mutation: Option<Mutation>,
    pub threads: Option<usize>,
}

impl SuiteParams {
    pub fn new(seed: u64, count: usize, depth: usize) -> Self {
        Self {
            seed,
            count,
            depth,
            jump_mode: false,
            right_jump_fraction: 0.3,
            force_right_jumps: false,
            mutation: None,
            threads: None,
        }
    }
}

/// One check outcome on one instance.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub property: &'static str,
    pub pass: bool,
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn pass(property: &'static str) -> Self {
        Self { property, pass: true, detail: None }
    }

    fn fail(property: &'static str, detail: String) -> Self {
        Self { property, pass: false, detail: Some(detail) }
    }

    fn of(property: &'static str, pass: bool, detail: impl FnOnce() -> String) -> Self {
        if pass {
            Self::pass(property)
        } else {
            Self::fail(property, detail())
        }
    }
}

/// Everything needed to replay one instance.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessRecord {
    pub instance: u64,
    pub derived_seed: u64,
    pub depth: usize,
    pub jump_mode: bool,
    pub driver: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertySummary {
    pub property: String,
    pub pass_count: usize,
    pub fail_count: usize,
    pub witnesses: Vec<WitnessRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub instance_count: usize,
    pub depth: usize,
    pub jump_mode: bool,
    pub mutation: Option<String>,
    pub total_checks: usize,
    pub total_failures: usize,
    pub properties: Vec<PropertySummary>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// One randomized instance: lattice, driver and obstacle, all derived from
/// the master seed and the instance index.
pub struct SuiteInstance {
    pub index: u64,
    pub derived_seed: u64,
    pub lattice: LatticeModel,
    pub driver: Driver,
    pub driver_name: &'static str,
    pub obstacle: LadlagProcess,
    pub rng: SplitMix64,
}

pub fn diffusion_driver_registry() -> Vec<(&'static str, Driver)> {
    vec![
        ("zero", Driver::zero()),
        ("linear(-1,0,0)", Driver::linear(-1.0, 0.0, 0.0)),
        ("abs_z", Driver::abs_z(1.0, 0.0)),
    ]
}

pub fn build_instance(params: &SuiteParams, index: u64) -> SuiteInstance {
    let master = SplitMix64::new(params.seed);
    let mut rng = master.fork(index);
    let derived_seed = rng.next_u64();
    if params.jump_mode {
        let depth = params.depth.min(3);
        let intensity = 0.2 * depth as f64; // lambda * dt = 0.2
        let grid = TimeGrid::new(1.0, depth).expect("valid grid");
        let lattice = build_lattice(grid, Mode::DiffusionPlusJump { intensity, mark: 1.0 })
            .expect("valid jump lattice");
        let (driver_name, driver) = if index.is_multiple_of(2) {
            ("jump_linear", Driver::jump_linear(-0.3, 0.2, 0.5, intensity))
        } else {
            ("zero", Driver::zero())
        };
        let obstacle = random_obstacle(
            &lattice,
            derived_seed,
            -1.0,
            1.0,
            params.right_jump_fraction,
            params.force_right_jumps,
        );
        SuiteInstance { index, derived_seed, lattice, driver, driver_name, obstacle, rng }
    } else {
        let grid = TimeGrid::new(1.0, params.depth).expect("valid grid");
        let lattice = build_lattice(grid, Mode::Diffusion).expect("valid lattice");
        let registry = diffusion_driver_registry();
        let (driver_name, driver) = registry[(index as usize) % registry.len()].clone();
        let obstacle = random_obstacle(
            &lattice,
            derived_seed,
            -1.0,
            1.0,
            params.right_jump_fraction,
            params.force_right_jumps,
        );
        SuiteInstance { index, derived_seed, lattice, driver, driver_name, obstacle, rng }
    }
}

const ORACLE_TOL: f64 = 1e-10;

/// Runs the full check battery on one instance.
pub fn run_instance_checks(instance: &mut SuiteInstance, mutation: Option<Mutation>) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let lattice = &instance.lattice;
    let driver = &instance.driver;
    let obstacle = &instance.obstacle;
    let params = SolverParams::default();
    let jump_mode = lattice.branching() == 3;

    let (clean_solution, diagnostics) = match solve_rbsde(lattice, driver, obstacle, &params) {
        Ok(pair) => pair,
        Err(e) => {
            out.push(CheckOutcome::fail("solve", format!("solver error: {e}")));
            return out;
        }
    };
    let solution = match mutation {
        Some(m) => m.apply(clean_solution.clone()),
        None => clean_solution.clone(),
    };

    // Picard contraction diagnostics.
    out.push(CheckOutcome::of(
        "picard_contraction",
        diagnostics.converged && diagnostics.ratios.iter().all(|r| *r < 1.0),
        || format!("converged={} ratios={:?}", diagnostics.converged, diagnostics.ratios),
    ));

    // Budget identity.
    let residual = solution.budget_residual(lattice);
    out.push(CheckOutcome::of("budget_identity", residual <= 1e-12, || {
        format!("residual {residual:e}")
    }));

    // Skorokhod minimality.
    let skorokhod = check_skorokhod(lattice, &solution, obstacle);
    out.push(CheckOutcome::of("skorokhod", skorokhod.pass, || {
        format!(
            "max gap {:e} at {} node(s)",
            skorokhod.max_contact_gap,
            skorokhod.violations.len()
        )
    }));

    // Obstacle domination.
    let mut domination_gap: f64 = 0.0;
    for k in 0..=lattice.steps() {
        for node in lattice.level_nodes(k) {
            domination_gap = domination_gap.max(obstacle.point(node) - solution.y(node));
            if k < lattice.steps() {
                domination_gap =
                    domination_gap.max(obstacle.right_limit(node) - solution.y_plus(node));
            }
        }
    }
    out.push(CheckOutcome::of("obstacle_domination", domination_gap <= 1e-13, || {
        format!("gap {domination_gap:e}")
    }));

    // Oracle equivalence. Binary trees enumerate from the root (depth <= 4);
    // ternary trees enumerate from t_1 (remaining depth <= 2).
    let oracle_base = if jump_mode {
        StoppingRule::at_level(lattice, 1)
    } else {
        StoppingRule::immediate(lattice)
    };
    let oracle_feasible = rbsde_core::stopping::enumerate_stopping_times(lattice, &oracle_base).is_ok();
    if oracle_feasible {
        match brute_force_value(lattice, driver, obstacle, &oracle_base) {
            Ok(best) => {
                let mut max_gap: f64 = 0.0;
                for (node, value) in &best {
                    max_gap = max_gap.max((value - solution.y(*node)).abs());
                }
                out.push(CheckOutcome::of("oracle_equivalence", max_gap <= ORACLE_TOL, || {
                    format!("|value - brute force| = {max_gap:e}")
                }));
            }
            Err(e) => out.push(CheckOutcome::fail("oracle_equivalence", e.to_string())),
        }
    }

    // Epsilon-optimality at the root.
    let root_rule = StoppingRule::immediate(lattice);
    let l_factor = default_l_factor(driver.lipschitz(), lattice.grid().horizon());
    let mut eps_failures = Vec::new();
    for epsilon in [0.5, 0.1, 0.01] {
        let rule = epsilon_optimal_time(lattice, &solution, obstacle, &root_rule, epsilon);
        let payoff = rule.payoff_at_stop(lattice, obstacle);
        match f_expectation(lattice, driver, &root_rule, &rule, &payoff) {
            Ok(values) => {
                let achieved = values[&NodeId::ROOT];
                if achieved < solution.y(NodeId::ROOT) - l_factor * epsilon - 1e-12 {
                    eps_failures.push(format!(
                        "eps={epsilon}: {achieved} < {} - {l_factor}*{epsilon}",
                        solution.y(NodeId::ROOT)
                    ));
                }
            }
            Err(e) => eps_failures.push(format!("eps={epsilon}: {e}")),
        }
    }
    out.push(CheckOutcome::of("epsilon_optimality", eps_failures.is_empty(), || {
        eps_failures.join("; ")
    }));

    // Hitting-rule contact and the optimality criterion.
    let tau_star = optimal_time(lattice, &solution, obstacle, &root_rule);
    match check_optimality(lattice, driver, obstacle, &solution, &tau_star, &root_rule) {
        Ok(check) => {
            out.push(CheckOutcome::of(
                "optimal_time_contact",
                check.max_contact_gap <= ORACLE_TOL,
                || format!("contact gap {:e}", check.max_contact_gap),
            ));
            // The martingale half is asserted on the class where the
            // obstacle has no right jump just before the hitting node.
            let clean = tau_star.frontier(lattice).iter().all(|node| match lattice.parent(*node) {
                Some((parent, _)) => {
                    (obstacle.point(parent) - obstacle.right_limit(parent)).abs() <= 1e-15
                }
                None => true,
            });
            if clean {
                out.push(CheckOutcome::of("optimality_criterion_clean_class", check.pass, || {
                    format!("{:?}", check.failure)
                }));
            }
        }
        Err(e) => out.push(CheckOutcome::fail("optimal_time_contact", e.to_string())),
    }

    // The brute-force argmax passes the criterion; the always-terminal rule
    // fails it whenever strictly improvable.
    if oracle_feasible && !jump_mode {
        match brute_force_argmax(lattice, driver, obstacle, &root_rule, NodeId::ROOT) {
            Ok((_, rule)) => {
                match check_optimality(lattice, driver, obstacle, &solution, &rule, &root_rule) {
                    Ok(check) => out.push(CheckOutcome::of(
                        "argmax_passes_criterion",
                        check.pass,
                        || format!("{:?}", check.failure),
                    )),
                    Err(e) => out.push(CheckOutcome::fail("argmax_passes_criterion", e.to_string())),
                }
            }
            Err(e) => out.push(CheckOutcome::fail("argmax_passes_criterion", e.to_string())),
        }
        let terminal = StoppingRule::terminal_only(lattice);
        let payoff = terminal.payoff_at_stop(lattice, obstacle);
        match f_expectation(lattice, driver, &root_rule, &terminal, &payoff) {
            Ok(values) => {
                let terminal_value = values[&NodeId::ROOT];
                let strictly_improvable = solution.y(NodeId::ROOT) > terminal_value + ORACLE_TOL;
                if strictly_improvable {
                    match check_optimality(lattice, driver, obstacle, &solution, &terminal, &root_rule)
                    {
                        Ok(check) => out.push(CheckOutcome::of(
                            "terminal_rule_rejected",
                            !check.pass,
                            || "terminal rule passed although strictly improvable".to_string(),
                        )),
                        Err(e) => {
                            out.push(CheckOutcome::fail("terminal_rule_rejected", e.to_string()))
                        }
                    }
                }
            }
            Err(e) => out.push(CheckOutcome::fail("terminal_rule_rejected", e.to_string())),
        }
    }

    // Comparison on a dominated pair derived from this instance.
    let offset: f64 = instance.rng.uniform(0.0, 0.5);
    let dominated_driver = driver.offset_by(-offset);
    let lowered = lower_obstacle(lattice, obstacle, &mut instance.rng);
    match solve_rbsde(lattice, &dominated_driver, &lowered, &params) {
        Ok((dominated_solution, _)) => {
            match compare_solutions(
                lattice,
                ComparisonInstance { driver, obstacle, solution: &clean_solution },
                ComparisonInstance {
                    driver: &dominated_driver,
                    obstacle: &lowered,
                    solution: &dominated_solution,
                },
                64,
                instance.derived_seed ^ 0xc0de,
            ) {
                Ok(report) => out.push(CheckOutcome::of("comparison", report.pass, || {
                    format!("excess {:e} at {:?}", report.max_excess, report.witness)
                })),
                Err(e) => out.push(CheckOutcome::fail("comparison", e.to_string())),
            }
        }
        Err(e) => out.push(CheckOutcome::fail("comparison", e.to_string())),
    }

    // A-priori Z-estimate on a frozen pair over the same obstacle.
    let f1 = random_step_process(lattice, &mut instance.rng);
    let f2 = random_step_process(lattice, &mut instance.rng);
    match (solve_rbsde_frozen(lattice, &f1, obstacle), solve_rbsde_frozen(lattice, &f2, obstacle)) {
        (Ok(sol1), Ok(sol2)) => match apriori_z_check(lattice, &sol1, &sol2, 1.0, 1.0) {
            Ok(check) => out.push(CheckOutcome::of("apriori_z_estimate", check.pass, || {
                format!("lhs {:e} > 1.05 * rhs {:e}", check.lhs, check.rhs)
            })),
            Err(e) => out.push(CheckOutcome::fail("apriori_z_estimate", e.to_string())),
        },
        (Err(e), _) | (_, Err(e)) => {
            out.push(CheckOutcome::fail("apriori_z_estimate", e.to_string()))
        }
    }

    // Exact change-of-variables telescoping.
    let semimartingale = solution.to_semimartingale(lattice);
    let mut gl_failures = Vec::new();
    for beta in [0.0, 2.0] {
        match galchouk_lenglart_check(lattice, &semimartingale, beta) {
            Ok(residual) if residual <= 1e-10 => {}
            Ok(residual) => gl_failures.push(format!("beta={beta}: residual {residual:e}")),
            Err(e) => gl_failures.push(format!("beta={beta}: {e}")),
        }
    }
    out.push(CheckOutcome::of("galchouk_lenglart", gl_failures.is_empty(), || {
        gl_failures.join("; ")
    }));

    // Mertens decomposition round-trip on the value process.
    match mertens_decompose(lattice, driver, &solution.value_process(lattice)) {
        Ok(decomposition) => {
            let mut max_gap: f64 = 0.0;
            for k in 0..lattice.steps() {
                for node in lattice.level_nodes(k) {
                    max_gap = max_gap
                        .max((decomposition.z[k][node.index] - solution.z(node)).abs())
                        .max(
                            (decomposition.delta_a_next[k][node.index]
                                - solution.delta_a_next(node))
                            .abs(),
                        )
                        .max((decomposition.delta_c[k][node.index] - solution.delta_c(node)).abs());
                }
            }
            out.push(CheckOutcome::of("mertens_roundtrip", max_gap <= 1e-12, || {
                format!("max gap {max_gap:e}")
            }));
        }
        Err(e) => out.push(CheckOutcome::fail("mertens_roundtrip", format!("rejected: {e}"))),
    }

    // The negated value process must be rejected whenever the solution has
    // any strict push: negating flips that push's sign in the decomposition.
    // A pushless Y is an E^f-martingale whose negation may legitimately
    // pass (zero or linear drivers), so those instances are skipped.
    let total_push: f64 = (0..lattice.steps())
        .flat_map(|k| lattice.level_nodes(k))
        .map(|node| solution.delta_a_next(node) + solution.delta_c(node))
        .sum();
    if total_push > 1e-9 {
        let negated = negate_process(&solution.value_process(lattice), lattice);
        let negation = check_strong_supermartingale(lattice, driver, &negated);
        out.push(CheckOutcome::of("negation_rejected", !negation.pass, || {
            format!("total push {total_push:e} but the negation was accepted")
        }));
    }

    // Snell minimality against dominating candidates.
    let mut snell_failures = Vec::new();
    let shifted = shift_process(&clean_solution.value_process(lattice), lattice, 0.5);
    match snell_minimality_check(lattice, driver, obstacle, &shifted, &params) {
        Ok(check) if check.pass => {}
        Ok(check) => snell_failures.push(format!(
            "shifted candidate dips below the value by {:e}",
            check.max_deficit
        )),
        Err(e) => snell_failures.push(format!("shifted candidate: {e}")),
    }
    let raised = raise_obstacle(lattice, obstacle, 0.3);
    match solve_rbsde(lattice, driver, &raised, &params) {
        Ok((raised_solution, _)) => {
            let candidate = raised_solution.value_process(lattice);
            match snell_minimality_check(lattice, driver, obstacle, &candidate, &params) {
                Ok(check) if check.pass => {}
                Ok(check) => snell_failures.push(format!(
                    "raised-obstacle candidate dips below by {:e}",
                    check.max_deficit
                )),
                Err(e) => snell_failures.push(format!("raised-obstacle candidate: {e}")),
            }
        }
        Err(e) => snell_failures.push(format!("raised-obstacle solve: {e}")),
    }
    out.push(CheckOutcome::of("snell_minimality", snell_failures.is_empty(), || {
        snell_failures.join("; ")
    }));

    // The value process is itself a strong supermartingale.
    let value_check =
        check_strong_supermartingale(lattice, driver, &clean_solution.value_process(lattice));
    out.push(CheckOutcome::of("value_is_supermartingale", value_check.pass, || {
        format!("witness {:?}", value_check.witness)
    }));

    // Jump-mode monotonicity assumption.
    if jump_mode {
        if let Some(spec) = driver.monotonicity() {
            let report = check_jump_monotonicity(
                driver,
                spec,
                lattice.jump_intensity(),
                256,
                instance.derived_seed ^ 0x6a75_6d70,
            );
            out.push(CheckOutcome::of("jump_monotonicity", report.ok, || {
                format!("{} violation(s)", report.violations.len())
            }));
        }
    }

    out
}

fn random_step_process(lattice: &LatticeModel, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    (0..lattice.steps())
        .map(|k| (0..lattice.nodes_at(k)).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

/// Lowers an obstacle nodewise keeping it r.u.s.c. and dominated.
pub fn lower_obstacle(
    lattice: &LatticeModel,
    obstacle: &LadlagProcess,
    rng: &mut SplitMix64,
) -> LadlagProcess {
    let n = lattice.steps();
    let mut point = Vec::with_capacity(n + 1);
    let mut drops: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut level = Vec::with_capacity(lattice.nodes_at(k));
        let mut drop_level = Vec::with_capacity(lattice.nodes_at(k));
        for node in lattice.level_nodes(k) {
            let drop = rng.uniform(0.0, 0.4);
            level.push(obstacle.point(node) - drop);
            drop_level.push(drop);
        }
        point.push(level);
        drops.push(drop_level);
    }
    let right: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            lattice
                .level_nodes(k)
                .map(|node| {
                    // Drop the right limit at least as much as the point so
                    // r.u.s.c. and right-limit dominance both survive.
                    let extra = rng.uniform(0.0, 0.2);
                    obstacle.right_limit(node) - drops[k][node.index] - extra
                })
                .collect()
        })
        .collect();
    LadlagProcess::new(lattice, point, right).expect("lowering preserves shape")
}

fn raise_obstacle(lattice: &LatticeModel, obstacle: &LadlagProcess, lift: f64) -> LadlagProcess {
    let n = lattice.steps();
    let point: Vec<Vec<f64>> = (0..=n)
        .map(|k| lattice.level_nodes(k).map(|node| obstacle.point(node) + lift).collect())
        .collect();
    let right: Vec<Vec<f64>> = (0..n)
        .map(|k| lattice.level_nodes(k).map(|node| obstacle.right_limit(node) + lift).collect())
        .collect();
    LadlagProcess::new(lattice, point, right).expect("lift preserves shape")
}

fn shift_process(process: &LadlagProcess, lattice: &LatticeModel, shift: f64) -> LadlagProcess {
    raise_obstacle(lattice, process, shift)
}

fn negate_process(process: &LadlagProcess, lattice: &LatticeModel) -> LadlagProcess {
    let n = lattice.steps();
    let point: Vec<Vec<f64>> = (0..=n)
        .map(|k| lattice.level_nodes(k).map(|node| -process.point(node)).collect())
        .collect();
    let right: Vec<Vec<f64>> = (0..n)
        .map(|k| lattice.level_nodes(k).map(|node| -process.right_limit(node)).collect())
        .collect();
    LadlagProcess::new(lattice, point, right).expect("negation preserves shape")
}

/// One instance's results with enough metadata to replay it.
struct InstanceOutcome {
    index: u64,
    derived_seed: u64,
    driver_name: &'static str,
    checks: Vec<CheckOutcome>,
}

fn run_one(params: &SuiteParams, index: u64) -> InstanceOutcome {
    let mut instance = build_instance(params, index);
    let checks = run_instance_checks(&mut instance, params.mutation);
    InstanceOutcome {
        index,
        derived_seed: instance.derived_seed,
        driver_name: instance.driver_name,
        checks,
    }
}

/// Runs the suite: `count` seeded instances at the given depth, checked in
/// parallel across workers (instance work is pure and seed-derived, so the
/// schedule cannot change any number), report assembled in instance order.
pub fn property_suite(params: &SuiteParams) -> SuiteReport {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let worker_count = resolve_threads(params.threads).min(params.count.max(1));
    let outcomes: Vec<InstanceOutcome> = if params.count == 0 {
        Vec::new()
    } else if worker_count <= 1 {
        (0..params.count as u64).map(|i| run_one(params, i)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<InstanceOutcome>>> =
            Mutex::new((0..params.count).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..worker_count {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= params.count {
                        break;
                    }
                    let outcome = run_one(params, i as u64);
                    results.lock().expect("no poisoned workers")[i] = Some(outcome);
                });
            }
        });
        results
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|slot| slot.expect("every instance computed"))
            .collect()
    };

    let mut properties: BTreeMap<&'static str, PropertySummary> = BTreeMap::new();
    let mut total_checks = 0usize;
    let mut total_failures = 0usize;
    for outcome in &outcomes {
        for check in &outcome.checks {
            total_checks += 1;
            let entry = properties.entry(check.property).or_insert_with(|| PropertySummary {
                property: check.property.to_string(),
                pass_count: 0,
                fail_count: 0,
                witnesses: Vec::new(),
            });
            if check.pass {
                entry.pass_count += 1;
            } else {
                total_failures += 1;
                entry.fail_count += 1;
                if entry.witnesses.len() < 16 {
                    entry.witnesses.push(WitnessRecord {
                        instance: outcome.index,
                        derived_seed: outcome.derived_seed,
                        depth: params.depth,
                        jump_mode: params.jump_mode,
                        driver: outcome.driver_name.to_string(),
                        detail: check.detail.clone().unwrap_or_default(),
                    });
                }
            }
        }
    }
    SuiteReport {
        seed: params.seed,
        instance_count: params.count,
        depth: params.depth,
        jump_mode: params.jump_mode,
        mutation: params.mutation.map(|m| m.id().to_string()),
        total_checks,
        total_failures,
        properties: properties.into_values().collect(),
    }
}
