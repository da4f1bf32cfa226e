//! Drivers and f-conditional expectations.
//!
//! The operator E^f_{sigma,tau}(zeta) is computed by backward induction with
//! an implicit per-step scheme: at each interior node the value solves
//! `y = E[Y_next | node] + f(t, y, z) * dt`, with `z` (and the jump
//! coefficient) extracted from the children by one-step martingale
//! representation. The fixed-point inner loop is a contraction whenever
//! `K * dt < 1/2`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    conditional_expectation, expect_children, represent_children, LatticeModel, NodeId,
};
use crate::rng::SplitMix64;
use crate::stopping::StoppingRule;

/// Inner fixed-point tolerance of the implicit step.
pub const IMPLICIT_STEP_TOL: f64 = 1e-13;
/// Inner fixed-point iteration cap.
pub const IMPLICIT_STEP_MAX_ITER: usize = 200;

/// Which arguments a driver actually reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DependsOn {
    pub y: bool,
    pub z: bool,
    pub jump: bool,
}

/// Driver kind tag; `Custom` names a compiled-in evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriverKind {
    Zero,
    Linear { a: f64, b: f64, c: f64 },
    Custom(String),
}

type DriverFn = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;
type ThetaFn = dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync;

/// Monotonicity metadata for jump drivers: an evaluator for the slope
/// process theta and the bound psi, with `theta >= -1` and `|theta| <= psi`
/// required wherever sampled.
#[derive(Clone)]
pub struct JumpMonotonicitySpec {
    theta: Arc<ThetaFn>,
    psi: f64,
}

impl JumpMonotonicitySpec {
    pub fn new(psi: f64, theta: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { theta: Arc::new(theta), psi }
    }

    pub fn constant(theta: f64, psi: f64) -> Self {
        Self::new(psi, move |_, _, _, _, _| theta)
    }

    pub fn theta(&self, t: f64, y: f64, z: f64, k1: f64, k2: f64) -> f64 {
        (self.theta)(t, y, z, k1, k2)
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }
}

impl std::fmt::Debug for JumpMonotonicitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpMonotonicitySpec").field("psi", &self.psi).finish()
    }
}

/// A Lipschitz driver `f(t, y, z[, k])` with its declared constant and
/// dependency flags.
#[derive(Clone)]
pub struct Driver {
    kind: DriverKind,
    eval: Arc<DriverFn>,
    lipschitz: f64,
    depends: DependsOn,
    monotonicity: Option<JumpMonotonicitySpec>,
}

impl std::fmt::Debug for Driver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Driver")
            .field("kind", &self.kind)
            .field("lipschitz", &self.lipschitz)
            .field("depends", &self.depends)
            .finish()
    }
}

impl Driver {
    pub fn zero() -> Self {
        Self {
            kind: DriverKind::Zero,
            eval: Arc::new(|_, _, _, _| 0.0),
            lipschitz: 0.0,
            depends: DependsOn::default(),
            monotonicity: None,
        }
    }

    /// `f(t, y, z) = a*y + b*z + c`.
    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        Self {
            kind: DriverKind::Linear { a, b, c },
            eval: Arc::new(move |_, y, z, _| a * y + b * z + c),
            lipschitz: a.abs() + b.abs(),
            depends: DependsOn { y: a != 0.0, z: b != 0.0, jump: false },
            monotonicity: None,
        }
    }

    /// `f(t, y, z) = scale*|z| + offset`.
    pub fn abs_z(scale: f64, offset: f64) -> Self {
        Self {
            kind: DriverKind::Custom("abs_z".into()),
            eval: Arc::new(move |_, _, z, _| scale * z.abs() + offset),
            lipschitz: scale.abs(),
            depends: DependsOn { y: false, z: true, jump: false },
            monotonicity: None,
        }
    }

    /// Jump-mode driver `f(t, y, z, k) = a*y + b*z + theta*lambda*k`, which
    /// satisfies the monotonicity assumption with constant slope `theta`.
    pub fn jump_linear(a: f64, b: f64, theta: f64, lambda: f64) -> Self {
        let weight = theta * lambda;
        Self {
            kind: DriverKind::Custom("jump_linear".into()),
            eval: Arc::new(move |_, y, z, k| a * y + b * z + weight * k),
            lipschitz: a.abs() + b.abs() + theta.abs() * lambda.sqrt(),
            depends: DependsOn { y: a != 0.0, z: b != 0.0, jump: weight != 0.0 },
            monotonicity: Some(JumpMonotonicitySpec::constant(theta, theta.abs())),
        }
    }

    pub fn custom(
        id: impl Into<String>,
        lipschitz: f64,
        depends: DependsOn,
        eval: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: DriverKind::Custom(id.into()),
            eval: Arc::new(eval),
            lipschitz,
            depends,
            monotonicity: None,
        }
    }

    pub fn with_monotonicity(mut self, spec: JumpMonotonicitySpec) -> Self {
        self.monotonicity = Some(spec);
        self
    }

    /// Overrides the declared Lipschitz constant (scenario configs may pin
    /// their own K).
    pub fn with_declared_lipschitz(mut self, k: f64) -> Self {
        self.lipschitz = k;
        self
    }

    /// Same driver shifted by a constant; dominance pairs are built with
    /// this. Zero and linear kinds stay structured so the implicit step
    /// keeps its closed form.
    pub fn offset_by(&self, delta: f64) -> Self {
        match self.kind {
            DriverKind::Zero => Driver::linear(0.0, 0.0, delta),
            DriverKind::Linear { a, b, c } => Driver::linear(a, b, c + delta),
            DriverKind::Custom(_) => {
                let inner = self.eval.clone();
                Self {
                    kind: DriverKind::Custom(format!("{:?}+offset", self.kind)),
                    eval: Arc::new(move |t, y, z, k| inner(t, y, z, k) + delta),
                    lipschitz: self.lipschitz,
                    depends: self.depends,
                    monotonicity: self.monotonicity.clone(),
                }
            }
        }
    }

    pub fn eval(&self, t: f64, y: f64, z: f64, k: f64) -> f64 {
        (self.eval)(t, y, z, k)
    }

    pub fn kind(&self) -> &DriverKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn depends_on(&self) -> DependsOn {
        self.depends
    }

    pub fn monotonicity(&self) -> Option<&JumpMonotonicitySpec> {
        self.monotonicity.as_ref()
    }

    pub fn ignores_solution(&self) -> bool {
        !self.depends.y && !self.depends.z && !self.depends.jump
    }

    /// Checks the implicit step is solvable: linear drivers are solved in
    /// closed form (needs `a*dt < 1`), drivers that ignore y are explicit,
    /// and the general fixed-point path needs `K*dt < 1/2`.
    pub fn check_step_contraction(&self, dt: f64) -> Result<()> {
        if let DriverKind::Linear { a, .. } = self.kind {
            if a * dt >= 1.0 {
                return Err(Error::StepContractionFailure(a * dt));
            }
            return Ok(());
        }
        if !self.depends.y {
            return Ok(());
        }
        let kdt = self.lipschitz * dt;
        if kdt >= 0.5 {
            return Err(Error::StepContractionFailure(kdt));
        }
        Ok(())
    }
}

/// One recorded Lipschitz violation.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzViolation {
    pub t: f64,
    pub y1: f64,
    pub z1: f64,
    pub y2: f64,
    pub z2: f64,
    pub ratio: f64,
}

/// Outcome of [`validate_driver`].
#[derive(Debug, Clone, Serialize)]
pub struct DriverValidation {
    pub ok: bool,
    pub declared_k: f64,
    /// Largest sampled increment ratio |df| / (|dy| + |dz|).
    pub empirical_k: f64,
    pub samples: usize,
    pub violations: Vec<LipschitzViolation>,
}

const MAX_RECORDED_VIOLATIONS: usize = 16;

/// Samples random (t, y1, z1, y2, z2) tuples in `[0,1] x [-10,10]^4` and
/// checks the declared Lipschitz bound on each.
pub fn validate_driver(driver: &Driver, sample_count: usize, seed: u64) -> Result<DriverValidation> {
    let mut rng = SplitMix64::new(seed);
    let mut empirical_k: f64 = 0.0;
    let mut violations = Vec::new();
    for _ in 0..sample_count.max(1) {
        let t = rng.next_f64();
        let y1 = rng.uniform(-10.0, 10.0);
        let z1 = rng.uniform(-10.0, 10.0);
        let y2 = rng.uniform(-10.0, 10.0);
        let z2 = rng.uniform(-10.0, 10.0);
        let f1 = driver.eval(t, y1, z1, 0.0);
        let f2 = driver.eval(t, y2, z2, 0.0);
        if !f1.is_finite() {
            return Err(Error::NonFiniteDriverValue { t, y: y1, z: z1 });
        }
        if !f2.is_finite() {
            return Err(Error::NonFiniteDriverValue { t, y: y2, z: z2 });
        }
        let denom = (y1 - y2).abs() + (z1 - z2).abs();
        if denom == 0.0 {
            continue;
        }
        let ratio = (f1 - f2).abs() / denom;
        empirical_k = empirical_k.max(ratio);
        if ratio > driver.lipschitz() * (1.0 + 1e-12) + 1e-12
            && violations.len() < MAX_RECORDED_VIOLATIONS
        {
            violations.push(LipschitzViolation { t, y1, z1, y2, z2, ratio });
        }
    }
    Ok(DriverValidation {
        ok: violations.is_empty(),
        declared_k: driver.lipschitz(),
        empirical_k,
        samples: sample_count,
        violations,
    })
}

/// One recorded jump-monotonicity violation.
#[derive(Debug, Clone, Serialize)]
pub struct JumpMonotonicityViolation {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub k1: f64,
    pub k2: f64,
    pub theta: f64,
    pub inequality_gap: f64,
}

/// Outcome of [`check_jump_monotonicity`].
#[derive(Debug, Clone, Serialize)]
pub struct JumpMonotonicityReport {
    pub ok: bool,
    pub samples: usize,
    pub violations: Vec<JumpMonotonicityViolation>,
}

/// Samples (t, y, z, k1, k2) and checks both the slope bounds
/// `-1 <= theta <= psi` and the inequality
/// `f(k1) - f(k2) >= lambda * theta * (k1 - k2)` (the single-atom pairing).
pub fn check_jump_monotonicity(
    driver: &Driver,
    spec: &JumpMonotonicitySpec,
    lambda: f64,
    sample_count: usize,
    seed: u64,
) -> JumpMonotonicityReport {
    let mut rng = SplitMix64::new(seed);
    let mut violations = Vec::new();
    let tol = 1e-12;
    for _ in 0..sample_count.max(1) {
        let t = rng.next_f64();
        let y = rng.uniform(-5.0, 5.0);
        let z = rng.uniform(-5.0, 5.0);
        let k1 = rng.uniform(-5.0, 5.0);
        let k2 = rng.uniform(-5.0, 5.0);
        let theta = spec.theta(t, y, z, k1, k2);
        let df = driver.eval(t, y, z, k1) - driver.eval(t, y, z, k2);
        let pairing = lambda * theta * (k1 - k2);
        let gap = df - pairing;
        let bounds_ok = theta >= -1.0 - tol && theta.abs() <= spec.psi() + tol;
        if (!bounds_ok || gap < -tol) && violations.len() < MAX_RECORDED_VIOLATIONS {
            violations.push(JumpMonotonicityViolation {
                t,
                y,
                z,
                k1,
                k2,
                theta,
                inequality_gap: gap,
            });
        }
    }
    JumpMonotonicityReport { ok: violations.is_empty(), samples: sample_count, violations }
}

/// Fixed point of `y = mean + f(t, y, z, k) * dt`. Linear drivers are
/// solved algebraically, drivers without y-dependence in one evaluation,
/// the rest by fixed-point iteration (contractive for `K*dt < 1/2`).
pub(crate) fn implicit_step(
    driver: &Driver,
    t: f64,
    mean: f64,
    z: f64,
    k_jump: f64,
    dt: f64,
) -> f64 {
    if let DriverKind::Linear { a, b, c } = *driver.kind() {
        return (mean + (b * z + c) * dt) / (1.0 - a * dt);
    }
    if !driver.depends_on().y {
        return mean + driver.eval(t, mean, z, k_jump) * dt;
    }
    let mut y = mean;
    for _ in 0..IMPLICIT_STEP_MAX_ITER {
        let next = mean + driver.eval(t, y, z, k_jump) * dt;
        let done = (next - y).abs() <= IMPLICIT_STEP_TOL;
        y = next;
        if done {
            break;
        }
    }
    y
}

/// Fixed point of `y = max(mean + f(t, y, z, k) * dt, floor)`.
pub(crate) fn implicit_reflected_step(
    driver: &Driver,
    t: f64,
    mean: f64,
    z: f64,
    k_jump: f64,
    dt: f64,
    floor: f64,
) -> f64 {
    if let DriverKind::Linear { a, b, c } = *driver.kind() {
        // For a*dt < 1 the reflected fixed point is the max of the
        // unconstrained root and the floor.
        let unconstrained = (mean + (b * z + c) * dt) / (1.0 - a * dt);
        return unconstrained.max(floor);
    }
    if !driver.depends_on().y {
        return (mean + driver.eval(t, mean, z, k_jump) * dt).max(floor);
    }
    let mut y = mean;
    for _ in 0..IMPLICIT_STEP_MAX_ITER {
        let next = (mean + driver.eval(t, y, z, k_jump) * dt).max(floor);
        let done = (next - y).abs() <= IMPLICIT_STEP_TOL;
        y = next;
        if done {
            break;
        }
    }
    y
}

/// Solution of a BSDE on `[0, tau]`: values exist at nodes at or before the
/// stopping frontier and are absent after it.
#[derive(Debug, Clone)]
pub struct BSDESolution {
    y: Vec<Vec<Option<f64>>>,
    z: Vec<Vec<Option<f64>>>,
    k_jump: Option<Vec<Vec<Option<f64>>>>,
}

impl BSDESolution {
    pub fn y(&self, node: NodeId) -> Option<f64> {
        self.y[node.level][node.index]
    }

    pub fn z(&self, node: NodeId) -> Option<f64> {
        self.z[node.level][node.index]
    }

    pub fn k_jump(&self, node: NodeId) -> Option<f64> {
        self.k_jump.as_ref().and_then(|k| k[node.level][node.index])
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Interior,
    Stopped,
    AfterStop,
}

fn label_regions(lattice: &LatticeModel, tau: &StoppingRule) -> Vec<Vec<Region>> {
    let n = lattice.steps();
    let mut labels: Vec<Vec<Region>> = (0..=n)
        .map(|k| vec![Region::Interior; lattice.nodes_at(k)])
        .collect();
    labels[0][0] = if tau.stops(NodeId::ROOT) { Region::Stopped } else { Region::Interior };
    for k in 0..n {
        for node in lattice.level_nodes(k) {
            let here = labels[k][node.index];
            for branch in 0..lattice.branching() {
                let child = lattice.child(node, branch);
                labels[k + 1][child.index] = match here {
                    Region::Stopped | Region::AfterStop => Region::AfterStop,
                    Region::Interior => {
                        if tau.stops(child) {
                            Region::Stopped
                        } else {
                            Region::Interior
                        }
                    }
                };
            }
        }
    }
    // Terminal nodes still marked interior would be unreachable stops; the
    // rule normalization forces terminal flags, so Interior cannot survive.
    debug_assert!(labels[n].iter().all(|r| *r != Region::Interior));
    labels
}

/// Solves the BSDE with driver `driver`, terminal time `tau` and terminal
/// condition `zeta` (one value per stopped node), backward from the frontier.
pub fn solve_bsde(
    lattice: &LatticeModel,
    driver: &Driver,
    tau: &StoppingRule,
    zeta: &BTreeMap<NodeId, f64>,
) -> Result<BSDESolution> {
    driver.check_step_contraction(lattice.dt())?;
    let n = lattice.steps();
    let labels = label_regions(lattice, tau);
    let mut y: Vec<Vec<Option<f64>>> =
        (0..=n).map(|k| vec![None; lattice.nodes_at(k)]).collect();
    let mut z: Vec<Vec<Option<f64>>> =
        (0..n).map(|k| vec![None; lattice.nodes_at(k)]).collect();
    let jump_mode = lattice.branching() == 3;
    let mut kj: Option<Vec<Vec<Option<f64>>>> = jump_mode
        .then(|| (0..n).map(|k| vec![None; lattice.nodes_at(k)]).collect());

    for k in (0..=n).rev() {
        for node in lattice.level_nodes(k) {
            match labels[k][node.index] {
                Region::AfterStop => {}
                Region::Stopped => {
                    let value =
                        zeta.get(&node).ok_or(Error::MissingTerminalValue(node))?;
                    y[k][node.index] = Some(*value);
                }
                Region::Interior => {
                    let children: Vec<f64> = (0..lattice.branching())
                        .map(|b| {
                            let child = lattice.child(node, b);
                            y[k + 1][child.index].ok_or(Error::MissingChildValue(node))
                        })
                        .collect::<Result<_>>()?;
                    let mean = expect_children(lattice, &children);
                    let rep = represent_children(lattice, &children);
                    let k_val = rep.k_jump.unwrap_or(0.0);
                    let t = lattice.time(k);
                    let value = implicit_step(driver, t, mean, rep.z, k_val, lattice.dt());
                    y[k][node.index] = Some(value);
                    z[k][node.index] = Some(rep.z);
                    if let Some(store) = kj.as_mut() {
                        store[k][node.index] = rep.k_jump;
                    }
                }
            }
        }
    }
    Ok(BSDESolution { y, z, k_jump: kj })
}

/// E^f_{sigma,tau}(zeta): the BSDE solution read off at sigma's frontier.
pub fn f_expectation(
    lattice: &LatticeModel,
    driver: &Driver,
    sigma: &StoppingRule,
    tau: &StoppingRule,
    zeta: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, f64>> {
    if let Some(witness) = sigma.first_violation_of_leq(lattice, tau) {
        return Err(Error::StoppingOrderViolation(witness));
    }
    let solution = solve_bsde(lattice, driver, tau, zeta)?;
    let mut values = BTreeMap::new();
    for node in sigma.frontier(lattice) {
        let value = solution.y(node).ok_or(Error::MissingTerminalValue(node))?;
        values.insert(node, value);
    }
    Ok(values)
}

/// Flavor of the exponentially weighted square norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaNormFlavor {
    /// `E[sum_k e^{beta t_k} x_k^2 dt]`, summed over step levels `0..N`.
    H2,
    /// `E[max over stopping rules of e^{beta tau} x_tau^2]`, by backward DP.
    S2,
}

/// Squared beta-norm of a node-indexed process.
///
/// `levels` carries one `Vec` per level starting at level 0; the H2 flavor
/// accepts either `N` levels (increment-indexed processes such as Z) or
/// `N + 1`, the S2 flavor requires all `N + 1`.
pub fn beta_norm_squared(
    lattice: &LatticeModel,
    levels: &[Vec<f64>],
    beta: f64,
    flavor: BetaNormFlavor,
) -> f64 {
    beta_norm_squared_shifted(lattice, levels, beta, flavor, 0.0)
}

/// Same norm with weights `e^{beta (t_k - t_shift)}`, i.e. the plain norm
/// scaled by `e^{-beta t_shift}`. The Picard loop shifts by the horizon so
/// large betas cannot overflow the weights or amplify ulp noise past the
/// stopping tolerance.
pub(crate) fn beta_norm_squared_shifted(
    lattice: &LatticeModel,
    levels: &[Vec<f64>],
    beta: f64,
    flavor: BetaNormFlavor,
    t_shift: f64,
) -> f64 {
    match flavor {
        BetaNormFlavor::H2 => {
            let upper = levels.len().min(lattice.steps());
            let dt = lattice.dt();
            let mut total = 0.0;
            for (k, level) in levels.iter().enumerate().take(upper) {
                let weight = (beta * (lattice.time(k) - t_shift)).exp() * dt;
                let mean_square: f64 = lattice
                    .level_nodes(k)
                    .map(|node| lattice.node_probability(node) * level[node.index].powi(2))
                    .sum();
                total += weight * mean_square;
            }
            total
        }
        BetaNormFlavor::S2 => {
            let n = lattice.steps();
            assert_eq!(
                levels.len(),
                n + 1,
                "S2 norm needs values at every level 0..=N"
            );
            let mut value: Vec<f64> = levels[n]
                .iter()
                .map(|x| (beta * (lattice.time(n) - t_shift)).exp() * x * x)
                .collect();
            for k in (0..n).rev() {
                let weight = (beta * (lattice.time(k) - t_shift)).exp();
                value = lattice
                    .level_nodes(k)
                    .map(|node| {
                        let cont = conditional_expectation(lattice, &value, node)
                            .expect("level sizes checked");
                        let stop = weight * levels[k][node.index].powi(2);
                        stop.max(cont)
                    })
                    .collect();
            }
            value[0]
        }
    }
}
