//! Optimal stopping under f-conditional expectations: value and risk,
//! epsilon-optimal and optimal stopping times, the optimality criterion,
//! strong supermartingale and Snell-envelope checks, and the brute-force
//! enumeration oracle.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, PushKind, Result};
use crate::expectation::{f_expectation, Driver};
use crate::lattice::{LadlagProcess, LatticeModel, NodeId};
use crate::rbsde::{
    mertens_decompose, solve_rbsde, MertensDecomposition, RBSDESolution, SolverParams,
};

/// An adapted stop/continue labeling of nodes. The effective stopping time
/// on each path is the first flagged node; terminal flags are forced on
/// construction so every path stops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRule {
    flags: Vec<Vec<bool>>,
}

impl StoppingRule {
    pub fn from_flags(lattice: &LatticeModel, mut flags: Vec<Vec<bool>>) -> Result<Self> {
        let n = lattice.steps();
        if flags.len() != n + 1 {
            return Err(Error::InvalidGrid(format!(
                "stopping rule has {} levels, lattice has {}",
                flags.len(),
                n + 1
            )));
        }
        for (k, level) in flags.iter().enumerate() {
            if level.len() != lattice.nodes_at(k) {
                return Err(Error::InvalidGrid(format!(
                    "stopping rule level {k} has {} nodes, expected {}",
                    level.len(),
                    lattice.nodes_at(k)
                )));
            }
        }
        flags[n].iter_mut().for_each(|f| *f = true);
        Ok(Self { flags })
    }

    /// Stops every path at the root (tau = 0).
    pub fn immediate(lattice: &LatticeModel) -> Self {
        let mut rule = Self::terminal_only(lattice);
        rule.flags[0][0] = true;
        rule
    }

    /// Stops only at the horizon (tau = T).
    pub fn terminal_only(lattice: &LatticeModel) -> Self {
        let n = lattice.steps();
        let flags = (0..=n)
            .map(|k| vec![k == n; lattice.nodes_at(k)])
            .collect();
        Self { flags }
    }

    /// Stops every path at the deterministic time `t_level`.
    pub fn at_level(lattice: &LatticeModel, level: usize) -> Self {
        let n = lattice.steps();
        let flags = (0..=n)
            .map(|k| vec![k == level || k == n; lattice.nodes_at(k)])
            .collect();
        Self { flags }
    }

    /// Builds a rule that stops at the given nodes (plus the forced terminal).
    pub fn from_stop_nodes(lattice: &LatticeModel, nodes: &[NodeId]) -> Self {
        let n = lattice.steps();
        let mut flags: Vec<Vec<bool>> = (0..=n)
            .map(|k| vec![k == n; lattice.nodes_at(k)])
            .collect();
        for node in nodes {
            flags[node.level][node.index] = true;
        }
        Self { flags }
    }

    pub fn stops(&self, node: NodeId) -> bool {
        self.flags[node.level][node.index]
    }

    /// First-stop nodes in depth-first preorder (up before down before jump),
    /// one per path bundle; this is the serialization order.
    pub fn frontier(&self, lattice: &LatticeModel) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![NodeId::ROOT];
        while let Some(node) = stack.pop() {
            if self.stops(node) {
                out.push(node);
            } else {
                for branch in (0..lattice.branching()).rev() {
                    stack.push(lattice.child(node, branch));
                }
            }
        }
        out
    }

    /// The level at which the path through `leaf` stops.
    pub fn stop_level_of_path(&self, lattice: &LatticeModel, leaf: usize) -> usize {
        let n = lattice.steps();
        let mut indices = vec![0usize; n + 1];
        indices[n] = leaf;
        for k in (0..n).rev() {
            indices[k] = indices[k + 1] / lattice.branching();
        }
        for (k, idx) in indices.iter().enumerate() {
            if self.flags[k][*idx] {
                return k;
            }
        }
        n
    }

    /// Self <= other pathwise: every frontier node of `other` must have a
    /// flagged ancestor-or-self in `self`. Returns the first witness where
    /// the order fails.
    pub fn first_violation_of_leq(
        &self,
        lattice: &LatticeModel,
        other: &StoppingRule,
    ) -> Option<NodeId> {
        for node in other.frontier(lattice) {
            let mut cursor = node;
            let mut covered = self.stops(cursor);
            while !covered {
                match lattice.parent(cursor) {
                    Some((parent, _)) => {
                        cursor = parent;
                        covered = self.stops(cursor);
                    }
                    None => break,
                }
            }
            if !covered {
                return Some(node);
            }
        }
        None
    }

    pub fn is_leq(&self, lattice: &LatticeModel, other: &StoppingRule) -> bool {
        self.first_violation_of_leq(lattice, other).is_none()
    }

    /// Path words of the frontier, e.g. `["uu", "ud", "d"]`.
    pub fn to_words(&self, lattice: &LatticeModel) -> Vec<String> {
        self.frontier(lattice)
            .into_iter()
            .map(|node| lattice.path_word(node))
            .collect()
    }

    pub fn from_words(lattice: &LatticeModel, words: &[String]) -> Result<Self> {
        let mut nodes = Vec::with_capacity(words.len());
        for word in words {
            let node = lattice.node_from_word(word).ok_or_else(|| {
                Error::InvalidGrid(format!("path word {word:?} does not address a node"))
            })?;
            nodes.push(node);
        }
        Ok(Self::from_stop_nodes(lattice, &nodes))
    }

    /// Terminal values `xi_tau`: the obstacle's point value at each frontier
    /// node (stopping at t delivers the point value, never the right limit).
    pub fn payoff_at_stop(
        &self,
        lattice: &LatticeModel,
        xi: &LadlagProcess,
    ) -> BTreeMap<NodeId, f64> {
        self.frontier(lattice)
            .into_iter()
            .map(|node| (node, xi.point(node)))
            .collect()
    }
}

/// Certificate attached to a stopping report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Certificate {
    /// The hitting rule passed the optimality criterion.
    Exact,
    /// Epsilon-optimal rule: achieves the value up to `l_factor * epsilon`.
    Epsilon { epsilon: f64, l_factor: f64 },
}

/// Value and risk at the frontier of S, with a certified stopping rule.
#[derive(Debug, Clone)]
pub struct StoppingReport {
    pub values: BTreeMap<NodeId, f64>,
    /// risk = -value, nodewise.
    pub risks: BTreeMap<NodeId, f64>,
    pub chosen_rule: StoppingRule,
    pub certificate: Certificate,
}

/// Default multiplier in the epsilon-optimality guarantee.
pub fn default_l_factor(lipschitz: f64, horizon: f64) -> f64 {
    (lipschitz * horizon).exp()
}

const CONTACT_TOL: f64 = 1e-12;
const OPTIMALITY_TOL: f64 = 1e-10;

/// Solves the reflected BSDE and reads the value (and risk = -value) at the
/// frontier of `s`. The chosen rule is the hitting time of `{Y = xi}` when
/// it certifies as optimal, otherwise an epsilon-optimal rule.
pub fn value_and_risk(
    lattice: &LatticeModel,
    driver: &Driver,
    xi: &LadlagProcess,
    s: &StoppingRule,
    params: &SolverParams,
) -> Result<StoppingReport> {
    let (solution, _) = solve_rbsde(lattice, driver, xi, params)?;
    let values: BTreeMap<NodeId, f64> = s
        .frontier(lattice)
        .into_iter()
        .map(|node| (node, solution.y(node)))
        .collect();
    let risks = values.iter().map(|(node, v)| (*node, -v)).collect();

    let tau_star = optimal_time(lattice, &solution, xi, s);
    let optimality = check_optimality(lattice, driver, xi, &solution, &tau_star, s)?;
    let (chosen_rule, certificate) = if optimality.pass {
        (tau_star, Certificate::Exact)
    } else {
        let epsilon = 1e-9;
        (
            epsilon_optimal_time(lattice, &solution, xi, s, epsilon),
            Certificate::Epsilon {
                epsilon,
                l_factor: default_l_factor(driver.lipschitz(), lattice.grid().horizon()),
            },
        )
    };
    Ok(StoppingReport { values, risks, chosen_rule, certificate })
}

/// First node at or after `s` where `Y <= xi + epsilon`; exists on every
/// path because `Y_N = xi_N` at the horizon.
pub fn epsilon_optimal_time(
    lattice: &LatticeModel,
    solution: &RBSDESolution,
    xi: &LadlagProcess,
    s: &StoppingRule,
    epsilon: f64,
) -> StoppingRule {
    first_hit(lattice, s, |node| solution.y(node) <= xi.point(node) + epsilon)
}

/// First node at or after `s` where `Y = xi` (to 1e-12).
pub fn optimal_time(
    lattice: &LatticeModel,
    solution: &RBSDESolution,
    xi: &LadlagProcess,
    s: &StoppingRule,
) -> StoppingRule {
    first_hit(lattice, s, |node| solution.y(node) <= xi.point(node) + CONTACT_TOL)
}

fn first_hit(
    lattice: &LatticeModel,
    s: &StoppingRule,
    mut hit: impl FnMut(NodeId) -> bool,
) -> StoppingRule {
    let mut stops = Vec::new();
    // Depth-first walk; entering at the frontier of s, stop at the first hit.
    let mut stack: Vec<(NodeId, bool)> = vec![(NodeId::ROOT, false)];
    while let Some((node, mut after_s)) = stack.pop() {
        after_s = after_s || s.stops(node);
        if after_s && hit(node) {
            stops.push(node);
            continue;
        }
        if node.level < lattice.steps() {
            for branch in 0..lattice.branching() {
                stack.push((lattice.child(node, branch), after_s));
            }
        }
    }
    StoppingRule::from_stop_nodes(lattice, &stops)
}

/// Why the optimality criterion failed.
#[derive(Debug, Clone, Serialize)]
pub enum OptimalityFailure {
    /// `Y != xi` at a stopped node.
    Contact { node: NodeId, gap: f64 },
    /// The value process is not an f-martingale up to the candidate rule.
    Martingale { node: NodeId, gap: f64 },
}

/// Outcome of the optimality criterion.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityCheck {
    pub pass: bool,
    pub max_contact_gap: f64,
    pub max_martingale_gap: f64,
    pub failure: Option<OptimalityFailure>,
}

/// A candidate rule is S-optimal iff (a) `Y = xi` at its stopped nodes and
/// (b) `E^f_{S,tau}(Y_tau) = Y_S`, both to 1e-10.
pub fn check_optimality(
    lattice: &LatticeModel,
    driver: &Driver,
    xi: &LadlagProcess,
    solution: &RBSDESolution,
    tau_hat: &StoppingRule,
    s: &StoppingRule,
) -> Result<OptimalityCheck> {
    if let Some(node) = s.first_violation_of_leq(lattice, tau_hat) {
        return Err(Error::StoppingOrderViolation(node));
    }
    let mut max_contact_gap: f64 = 0.0;
    let mut failure = None;
    for node in tau_hat.frontier(lattice) {
        let gap = (solution.y(node) - xi.point(node)).abs();
        max_contact_gap = max_contact_gap.max(gap);
        if gap > OPTIMALITY_TOL && failure.is_none() {
            failure = Some(OptimalityFailure::Contact { node, gap });
        }
    }

    let stopped_values: BTreeMap<NodeId, f64> = tau_hat
        .frontier(lattice)
        .into_iter()
        .map(|node| (node, solution.y(node)))
        .collect();
    let replayed = f_expectation(lattice, driver, s, tau_hat, &stopped_values)?;
    let mut max_martingale_gap: f64 = 0.0;
    for (node, value) in &replayed {
        let gap = (value - solution.y(*node)).abs();
        max_martingale_gap = max_martingale_gap.max(gap);
        if gap > OPTIMALITY_TOL && failure.is_none() {
            failure = Some(OptimalityFailure::Martingale { node: *node, gap });
        }
    }
    Ok(OptimalityCheck {
        pass: failure.is_none(),
        max_contact_gap,
        max_martingale_gap,
        failure,
    })
}

/// Hard cap on the number of enumerated rules.
pub const MAX_ENUMERATED_RULES: u128 = 1_000_000;
/// Max remaining depth for enumeration on binary trees.
pub const MAX_BINARY_ENUM_DEPTH: usize = 4;
/// Max remaining depth for enumeration on ternary (jump-mode) trees.
pub const MAX_TERNARY_ENUM_DEPTH: usize = 2;

fn rules_below(branching: usize, depth: usize) -> u128 {
    // S(0) = 1, S(m) = 1 + S(m-1)^branching.
    let mut count: u128 = 1;
    for _ in 0..depth {
        count = 1 + count.saturating_pow(branching as u32);
    }
    count
}

/// Streaming enumeration of every adapted stopping rule between `s` and the
/// horizon: per frontier node of `s`, all subtree rules; globally, their
/// cartesian product, yielded odometer-style, each rule exactly once.
pub struct StoppingTimeEnumeration<'a> {
    lattice: &'a LatticeModel,
    /// Per frontier node, the list of stop-node sets of its subtree rules.
    choices: Vec<Vec<Vec<NodeId>>>,
    odometer: Vec<usize>,
    exhausted: bool,
}

impl<'a> Iterator for StoppingTimeEnumeration<'a> {
    type Item = StoppingRule;

    fn next(&mut self) -> Option<StoppingRule> {
        if self.exhausted {
            return None;
        }
        let mut stops = Vec::new();
        for (slot, choice) in self.odometer.iter().enumerate() {
            stops.extend_from_slice(&self.choices[slot][*choice]);
        }
        let rule = StoppingRule::from_stop_nodes(self.lattice, &stops);
        // Advance the odometer.
        let mut slot = 0;
        loop {
            if slot == self.odometer.len() {
                self.exhausted = true;
                break;
            }
            self.odometer[slot] += 1;
            if self.odometer[slot] < self.choices[slot].len() {
                break;
            }
            self.odometer[slot] = 0;
            slot += 1;
        }
        Some(rule)
    }
}

fn subtree_rules(lattice: &LatticeModel, node: NodeId) -> Vec<Vec<NodeId>> {
    if node.level == lattice.steps() {
        return vec![vec![node]];
    }
    let mut rules = vec![vec![node]];
    let child_rules: Vec<Vec<Vec<NodeId>>> = (0..lattice.branching())
        .map(|b| subtree_rules(lattice, lattice.child(node, b)))
        .collect();
    // Cartesian product of the child rule sets.
    let mut odometer = vec![0usize; child_rules.len()];
    loop {
        let mut combined = Vec::new();
        for (slot, choice) in odometer.iter().enumerate() {
            combined.extend_from_slice(&child_rules[slot][*choice]);
        }
        rules.push(combined);
        let mut slot = 0;
        loop {
            if slot == odometer.len() {
                return rules;
            }
            odometer[slot] += 1;
            if odometer[slot] < child_rules[slot].len() {
                break;
            }
            odometer[slot] = 0;
            slot += 1;
        }
    }
}

/// Enumerates every adapted stopping rule `tau` with `s <= tau <= T`.
///
/// Guards: remaining depth from each frontier node of `s` at most 4 on
/// binary trees (2 on ternary ones), and at most 10^6 rules in total.
pub fn enumerate_stopping_times<'a>(
    lattice: &'a LatticeModel,
    s: &StoppingRule,
) -> Result<StoppingTimeEnumeration<'a>> {
    let frontier = s.frontier(lattice);
    let max_depth = if lattice.branching() == 2 {
        MAX_BINARY_ENUM_DEPTH
    } else {
        MAX_TERNARY_ENUM_DEPTH
    };
    let mut total: u128 = 1;
    for node in &frontier {
        let depth = lattice.steps() - node.level;
        if depth > max_depth {
            return Err(Error::CountOverflow {
                count: rules_below(lattice.branching(), depth),
                max: rules_below(lattice.branching(), max_depth),
            });
        }
        total = total.saturating_mul(rules_below(lattice.branching(), depth));
        if total > MAX_ENUMERATED_RULES {
            return Err(Error::CountOverflow { count: total, max: MAX_ENUMERATED_RULES });
        }
    }
    let choices: Vec<Vec<Vec<NodeId>>> = frontier
        .iter()
        .map(|node| subtree_rules(lattice, *node))
        .collect();
    let odometer = vec![0usize; choices.len()];
    Ok(StoppingTimeEnumeration { lattice, choices, odometer, exhausted: false })
}

/// Nodewise maximum over every enumerated rule of `E^f_{s,tau}(xi_tau)`.
pub fn brute_force_value(
    lattice: &LatticeModel,
    driver: &Driver,
    xi: &LadlagProcess,
    s: &StoppingRule,
) -> Result<BTreeMap<NodeId, f64>> {
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    for rule in enumerate_stopping_times(lattice, s)? {
        let payoff = rule.payoff_at_stop(lattice, xi);
        let values = f_expectation(lattice, driver, s, &rule, &payoff)?;
        for (node, value) in values {
            best.entry(node)
                .and_modify(|current| *current = current.max(value))
                .or_insert(value);
        }
    }
    Ok(best)
}

/// Like [`brute_force_value`] but also returns a rule attaining the maximum
/// at the requested node (the first maximizer in enumeration order).
pub fn brute_force_argmax(
    lattice: &LatticeModel,
    driver: &Driver,
    xi: &LadlagProcess,
    s: &StoppingRule,
    at: NodeId,
) -> Result<(f64, StoppingRule)> {
    let mut best: Option<(f64, StoppingRule)> = None;
    for rule in enumerate_stopping_times(lattice, s)? {
        let payoff = rule.payoff_at_stop(lattice, xi);
        let values = f_expectation(lattice, driver, s, &rule, &payoff)?;
        let value = *values.get(&at).ok_or(Error::MissingTerminalValue(at))?;
        match &best {
            Some((incumbent, _)) if value <= *incumbent => {}
            _ => best = Some((value, rule)),
        }
    }
    best.ok_or(Error::MissingTerminalValue(at))
}

/// Outcome of the strong supermartingale check.
#[derive(Debug)]
pub struct SupermartingaleCheck {
    pub pass: bool,
    pub witness: Option<(NodeId, PushKind, f64)>,
    /// Present when the check passes.
    pub decomposition: Option<MertensDecomposition>,
}

/// A ladlag process is a strong E^f-supermartingale on the lattice iff its
/// Mertens decomposition has nonnegative increments (which also forces the
/// right upper-semicontinuity `X_plus <= X`).
pub fn check_strong_supermartingale(
    lattice: &LatticeModel,
    driver: &Driver,
    x: &LadlagProcess,
) -> SupermartingaleCheck {
    match mertens_decompose(lattice, driver, x) {
        Ok(decomposition) => SupermartingaleCheck {
            pass: true,
            witness: None,
            decomposition: Some(decomposition),
        },
        Err(Error::NotSupermartingale { node, kind, value }) => SupermartingaleCheck {
            pass: false,
            witness: Some((node, kind, value)),
            decomposition: None,
        },
        Err(_) => SupermartingaleCheck { pass: false, witness: None, decomposition: None },
    }
}

/// Outcome of the Snell minimality check.
#[derive(Debug, Clone, Serialize)]
pub struct SnellCheck {
    pub pass: bool,
    /// Largest amount by which the candidate dips below the solver value.
    pub max_deficit: f64,
    pub witness: Option<NodeId>,
}

const SNELL_TOL: f64 = 1e-12;

/// Verifies the solver's value process is minimal: any strong
/// E^f-supermartingale candidate `x` dominating the obstacle must dominate
/// the solution nodewise.
pub fn snell_minimality_check(
    lattice: &LatticeModel,
    driver: &Driver,
    xi: &LadlagProcess,
    x: &LadlagProcess,
    params: &SolverParams,
) -> Result<SnellCheck> {
    let super_check = check_strong_supermartingale(lattice, driver, x);
    if !super_check.pass {
        return Err(Error::HypothesisViolated(format!(
            "candidate is not a strong supermartingale: witness {:?}",
            super_check.witness
        )));
    }
    for k in 0..=lattice.steps() {
        for node in lattice.level_nodes(k) {
            if x.point(node) < xi.point(node) - SNELL_TOL {
                return Err(Error::HypothesisViolated(format!(
                    "candidate is below the obstacle at node {node}"
                )));
            }
            if k < lattice.steps() && x.right_limit(node) < xi.right_limit(node) - SNELL_TOL {
                return Err(Error::HypothesisViolated(format!(
                    "candidate right limit is below the obstacle at node {node}"
                )));
            }
        }
    }
    let (solution, _) = solve_rbsde(lattice, driver, xi, params)?;
    let mut max_deficit = f64::NEG_INFINITY;
    let mut witness = None;
    for k in 0..=lattice.steps() {
        for node in lattice.level_nodes(k) {
            let deficit = solution.y(node) - x.point(node);
            if deficit > max_deficit {
                max_deficit = deficit;
                witness = Some(node);
            }
        }
    }
    let pass = max_deficit <= SNELL_TOL;
    Ok(SnellCheck { pass, max_deficit, witness: if pass { None } else { witness } })
}
