//! Discrete filtration model: a non-recombining binary path tree (optionally
//! with a Poisson-jump third branch), conditional expectation, one-step
//! martingale representation, ladlag-process validation and the exact
//! discrete change-of-variables identity.
//!
//! Nodes live on levels `0..=N`. A node is addressed by `(level, index)`;
//! the children of `(k, i)` are `(k+1, i*B + b)` where `B` is the branching
//! factor and `b` the branch number. The base-`B` digits of the index spell
//! the path word, most significant digit first, so enumeration is
//! deterministic and adaptedness is structural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Budget on total node count; solves beyond this must use the
/// level-deterministic fast path instead of the full tree.
pub const MAX_TREE_NODES: u128 = 1 << 22;

/// Uniform time grid on `[0, T]` with `N` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("N must be >= 1".into()));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("T = {horizon} must be positive and finite")));
        }
        let dt = horizon / steps as f64;
        Ok(Self { horizon, steps, dt })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid time `t_k = k * dt`.
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }
}

/// Branch labels. `Jump` exists only on jump-mode lattices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Up,
    Down,
    Jump,
}

impl Branch {
    pub fn letter(self) -> char {
        match self {
            Branch::Up => 'u',
            Branch::Down => 'd',
            Branch::Jump => 'j',
        }
    }

    fn from_digit(d: usize) -> Branch {
        match d {
            0 => Branch::Up,
            1 => Branch::Down,
            _ => Branch::Jump,
        }
    }

    pub fn from_letter(c: char) -> Option<Branch> {
        match c {
            'u' => Some(Branch::Up),
            'd' => Some(Branch::Down),
            'j' => Some(Branch::Jump),
            _ => None,
        }
    }
}

/// Lattice flavour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    Diffusion,
    DiffusionPlusJump {
        /// Jump intensity per unit time; `intensity * dt < 1` required.
        intensity: f64,
        /// The single Poisson mark u0 (the measure is `intensity * delta_{u0}`).
        mark: f64,
    },
}

/// Node address: level and index within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }

    pub const ROOT: NodeId = NodeId { level: 0, index: 0 };
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.level, self.index)
    }
}

/// The discrete filtration model. Immutable after construction; all
/// operations on it are pure functions, so concurrent reads are safe and
/// per-level work can be scheduled in any order.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    grid: TimeGrid,
    mode: Mode,
    sqrt_dt: f64,
    /// Branch probabilities, one entry per branch.
    probs: Vec<f64>,
}

/// Builds the lattice, checking the grid and jump-probability preconditions.
pub fn build_lattice(grid: TimeGrid, mode: Mode) -> Result<LatticeModel> {
    let probs = match mode {
        Mode::Diffusion => vec![0.5, 0.5],
        Mode::DiffusionPlusJump { intensity, .. } => {
            if intensity < 0.0 || !intensity.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "jump intensity {intensity} must be nonnegative and finite"
                )));
            }
            let p_jump = intensity * grid.dt();
            if p_jump >= 1.0 {
                return Err(Error::JumpProbabilityOverflow(p_jump));
            }
            let p_move = (1.0 - p_jump) / 2.0;
            vec![p_move, p_move, p_jump]
        }
    };
    let lattice = LatticeModel {
        grid,
        mode,
        sqrt_dt: grid.dt().sqrt(),
        probs,
    };
    let nodes = lattice.total_nodes();
    if nodes > MAX_TREE_NODES {
        return Err(Error::TreeTooLarge { nodes, max: MAX_TREE_NODES });
    }
    Ok(lattice)
}

impl LatticeModel {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, level: usize) -> f64 {
        self.grid.time(level)
    }

    /// Branching factor: 2 in diffusion mode, 3 with jumps.
    pub fn branching(&self) -> usize {
        self.probs.len()
    }

    pub fn branch_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn jump_intensity(&self) -> f64 {
        match self.mode {
            Mode::Diffusion => 0.0,
            Mode::DiffusionPlusJump { intensity, .. } => intensity,
        }
    }

    pub fn jump_mark(&self) -> Option<f64> {
        match self.mode {
            Mode::Diffusion => None,
            Mode::DiffusionPlusJump { mark, .. } => Some(mark),
        }
    }

    /// Number of nodes at a level: B^level.
    pub fn nodes_at(&self, level: usize) -> usize {
        self.branching().pow(level as u32)
    }

    pub fn total_nodes(&self) -> u128 {
        let b = self.branching() as u128;
        let mut total = 0u128;
        let mut level = 1u128;
        for _ in 0..=self.steps() {
            total += level;
            level *= b;
        }
        total
    }

    pub fn child(&self, node: NodeId, branch: usize) -> NodeId {
        debug_assert!(branch < self.branching());
        NodeId::new(node.level + 1, node.index * self.branching() + branch)
    }

    pub fn parent(&self, node: NodeId) -> Option<(NodeId, Branch)> {
        if node.level == 0 {
            return None;
        }
        let b = self.branching();
        Some((
            NodeId::new(node.level - 1, node.index / b),
            Branch::from_digit(node.index % b),
        ))
    }

    /// Brownian increment realized on the step into a child via `branch`.
    pub fn brownian_increment(&self, branch: usize) -> f64 {
        match Branch::from_digit(branch) {
            Branch::Up => self.sqrt_dt,
            Branch::Down => -self.sqrt_dt,
            Branch::Jump => 0.0,
        }
    }

    /// Compensated Poisson increment on the step into a child via `branch`:
    /// `1_{jump} - lambda*dt`. Zero in diffusion mode.
    pub fn compensated_jump_increment(&self, branch: usize) -> f64 {
        match self.mode {
            Mode::Diffusion => 0.0,
            Mode::DiffusionPlusJump { intensity, .. } => {
                let p = intensity * self.dt();
                if Branch::from_digit(branch) == Branch::Jump {
                    1.0 - p
                } else {
                    -p
                }
            }
        }
    }

    /// Probability of reaching a node from the root (product of branch
    /// probabilities along its path word).
    pub fn node_probability(&self, node: NodeId) -> f64 {
        let b = self.branching();
        let mut idx = node.index;
        let mut p = 1.0;
        for _ in 0..node.level {
            p *= self.probs[idx % b];
            idx /= b;
        }
        p
    }

    /// Path word of a node, e.g. `"ud"`; the root has the empty word.
    pub fn path_word(&self, node: NodeId) -> String {
        let b = self.branching();
        let mut idx = node.index;
        let mut letters = Vec::with_capacity(node.level);
        for _ in 0..node.level {
            letters.push(Branch::from_digit(idx % b).letter());
            idx /= b;
        }
        letters.iter().rev().collect()
    }

    /// Inverse of [`path_word`](Self::path_word).
    pub fn node_from_word(&self, word: &str) -> Option<NodeId> {
        let b = self.branching();
        let mut index = 0usize;
        let mut level = 0usize;
        for c in word.chars() {
            let branch = Branch::from_letter(c)?;
            let digit = match branch {
                Branch::Up => 0,
                Branch::Down => 1,
                Branch::Jump => 2,
            };
            if digit >= b || level >= self.steps() {
                return None;
            }
            index = index * b + digit;
            level += 1;
        }
        Some(NodeId::new(level, index))
    }

    /// Iterates all nodes of a level in index order.
    pub fn level_nodes(&self, level: usize) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes_at(level)).map(move |i| NodeId::new(level, i))
    }
}

/// Probability-weighted average of the values in a node's child block.
pub fn expect_children(lattice: &LatticeModel, child_block: &[f64]) -> f64 {
    debug_assert_eq!(child_block.len(), lattice.branching());
    child_block
        .iter()
        .zip(lattice.branch_probs())
        .map(|(x, p)| p * x)
        .sum()
}

/// Probability-weighted average of child values.
///
/// `children` holds the values on level `node.level + 1`, indexed like that
/// level; only the entries under `node` are read.
pub fn conditional_expectation(
    lattice: &LatticeModel,
    children: &[f64],
    node: NodeId,
) -> Result<f64> {
    let b = lattice.branching();
    let base = node.index * b;
    if base + b > children.len() {
        return Err(Error::MissingChildValue(node));
    }
    Ok(expect_children(lattice, &children[base..base + b]))
}

/// One-step martingale representation extracted from child values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleComponent {
    /// Coefficient against the Brownian increment.
    pub z: f64,
    /// Coefficient against the compensated jump increment (jump mode only).
    pub k_jump: Option<f64>,
}

/// Representation coefficients extracted from a node's child block.
pub fn represent_children(lattice: &LatticeModel, child_block: &[f64]) -> MartingaleComponent {
    debug_assert_eq!(child_block.len(), lattice.branching());
    let z = (child_block[0] - child_block[1]) / (2.0 * lattice.sqrt_dt());
    let k_jump = match lattice.mode() {
        Mode::Diffusion => None,
        Mode::DiffusionPlusJump { intensity, .. } => {
            let mean = expect_children(lattice, child_block);
            let p = intensity * lattice.dt();
            Some((child_block[2] - mean) / (1.0 - p))
        }
    };
    MartingaleComponent { z, k_jump }
}

/// Extracts `z` (and `k_jump` in jump mode) such that every child value
/// equals `E[X | node] + z * dW_child (+ k_jump * dN~_child)` exactly.
pub fn martingale_component(
    lattice: &LatticeModel,
    children: &[f64],
    node: NodeId,
) -> Result<MartingaleComponent> {
    let b = lattice.branching();
    let base = node.index * b;
    if base + b > children.len() {
        return Err(Error::MissingChildValue(node));
    }
    Ok(represent_children(lattice, &children[base..base + b]))
}

/// An adapted process: one value per node on levels `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn from_levels(lattice: &LatticeModel, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != lattice.steps() + 1 {
            return Err(Error::InvalidGrid(format!(
                "process has {} levels, lattice has {}",
                levels.len(),
                lattice.steps() + 1
            )));
        }
        for (k, level) in levels.iter().enumerate() {
            if level.len() != lattice.nodes_at(k) {
                return Err(Error::MissingChildValue(NodeId::new(k, level.len())));
            }
        }
        Ok(Self { levels })
    }

    pub fn constant(lattice: &LatticeModel, value: f64) -> Self {
        let levels = (0..=lattice.steps())
            .map(|k| vec![value; lattice.nodes_at(k)])
            .collect();
        Self { levels }
    }

    /// Builds a process by evaluating `f(node)` at every node.
    pub fn from_fn(lattice: &LatticeModel, mut f: impl FnMut(NodeId) -> f64) -> Self {
        let levels = (0..=lattice.steps())
            .map(|k| {
                (0..lattice.nodes_at(k))
                    .map(|i| f(NodeId::new(k, i)))
                    .collect()
            })
            .collect();
        Self { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.levels[node.level][node.index]
    }

    pub fn set(&mut self, node: NodeId, value: f64) {
        self.levels[node.level][node.index] = value;
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }
}

/// An adapted ladlag process: a point value at every node, plus the value
/// effective on the open interval just after each non-terminal node (the
/// "right limit"). This is the discrete carrier of obstacles that are not
/// right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct LadlagProcess {
    /// Point values on levels `0..=N`.
    point: Vec<Vec<f64>>,
    /// Right limits on levels `0..N`.
    right: Vec<Vec<f64>>,
}

impl LadlagProcess {
    pub fn new(lattice: &LatticeModel, point: Vec<Vec<f64>>, right: Vec<Vec<f64>>) -> Result<Self> {
        if point.len() != lattice.steps() + 1 || right.len() != lattice.steps() {
            return Err(Error::ObstacleInvalid(format!(
                "expected {} point levels and {} right-limit levels, got {} and {}",
                lattice.steps() + 1,
                lattice.steps(),
                point.len(),
                right.len()
            )));
        }
        for (k, level) in point.iter().enumerate() {
            if level.len() != lattice.nodes_at(k) {
                return Err(Error::ObstacleInvalid(format!(
                    "point level {k} has {} nodes, expected {}",
                    level.len(),
                    lattice.nodes_at(k)
                )));
            }
        }
        for (k, level) in right.iter().enumerate() {
            if level.len() != lattice.nodes_at(k) {
                return Err(Error::ObstacleInvalid(format!(
                    "right-limit level {k} has {} nodes, expected {}",
                    level.len(),
                    lattice.nodes_at(k)
                )));
            }
        }
        Ok(Self { point, right })
    }

    /// A right-continuous ladlag process: right limits equal point values.
    pub fn right_continuous(lattice: &LatticeModel, point: Vec<Vec<f64>>) -> Result<Self> {
        let right = point[..point.len().saturating_sub(1)].to_vec();
        Self::new(lattice, point, right)
    }

    pub fn constant(lattice: &LatticeModel, value: f64) -> Self {
        let point = (0..=lattice.steps())
            .map(|k| vec![value; lattice.nodes_at(k)])
            .collect();
        let right = (0..lattice.steps())
            .map(|k| vec![value; lattice.nodes_at(k)])
            .collect();
        Self { point, right }
    }

    pub fn num_levels(&self) -> usize {
        self.point.len()
    }

    pub fn point(&self, node: NodeId) -> f64 {
        self.point[node.level][node.index]
    }

    pub fn right_limit(&self, node: NodeId) -> f64 {
        self.right[node.level][node.index]
    }

    pub fn point_levels(&self) -> &[Vec<f64>] {
        &self.point
    }

    pub fn right_levels(&self) -> &[Vec<f64>] {
        &self.right
    }

    pub fn set_point(&mut self, node: NodeId, value: f64) {
        self.point[node.level][node.index] = value;
    }

    pub fn set_right(&mut self, node: NodeId, value: f64) {
        self.right[node.level][node.index] = value;
    }
}

/// Checks right upper-semicontinuity at grid level: `xi_plus <= xi` at every
/// non-terminal node. Report-style: returns the offending nodes.
pub fn validate_ladlag(lattice: &LatticeModel, xi: &LadlagProcess) -> Vec<NodeId> {
    let mut violations = Vec::new();
    for k in 0..lattice.steps() {
        for node in lattice.level_nodes(k) {
            if xi.right_limit(node) > xi.point(node) {
                violations.push(node);
            }
        }
    }
    violations
}

/// A lattice optional semimartingale in decomposed form: initial value,
/// per-node martingale coefficients, finite-variation interval increments
/// and right-jump increments, together with the path values they are meant
/// to reproduce.
///
/// Conventions: at a level-`k` node, `a` is the finite-variation increment
/// realized over `(t_k, t_{k+1}]`, `z` (and `k_jump`) multiply the step's
/// martingale increments, and `c >= 0` is the downward right jump at `t_k`
/// itself (`Y_plus = Y - c`).
#[derive(Debug, Clone)]
pub struct DiscreteSemimartingale {
    /// Point values on levels 0..=N.
    pub point: Vec<Vec<f64>>,
    /// Post-right-jump values on levels 0..N.
    pub right: Vec<Vec<f64>>,
    /// Martingale coefficient per node, levels 0..N.
    pub z: Vec<Vec<f64>>,
    /// Jump-martingale coefficient per node, levels 0..N (jump mode).
    pub k_jump: Option<Vec<Vec<f64>>>,
    /// Interval finite-variation increment per node, levels 0..N.
    pub a: Vec<Vec<f64>>,
    /// Right-jump increment per node (nonnegative), levels 0..N.
    pub c: Vec<Vec<f64>>,
}

const RECONSTRUCTION_TOL: f64 = 1e-11;

impl DiscreteSemimartingale {
    /// Verifies the decomposition reproduces its own path values:
    /// `Y_plus = Y - c` at each node and
    /// `Y_child = Y_plus + a + z*dW (+ k*dN~)` for every child.
    pub fn check_reconstruction(&self, lattice: &LatticeModel) -> Result<()> {
        for k in 0..lattice.steps() {
            for node in lattice.level_nodes(k) {
                let y = self.point[k][node.index];
                let y_plus = self.right[k][node.index];
                let c = self.c[k][node.index];
                let residual = (y_plus - (y - c)).abs();
                if residual > RECONSTRUCTION_TOL {
                    return Err(Error::InconsistentDecomposition { node, residual });
                }
                let z = self.z[k][node.index];
                let kj = self.k_jump.as_ref().map(|kj| kj[k][node.index]);
                let a = self.a[k][node.index];
                for branch in 0..lattice.branching() {
                    let child = lattice.child(node, branch);
                    let predicted = y_plus
                        + a
                        + z * lattice.brownian_increment(branch)
                        + kj.unwrap_or(0.0) * lattice.compensated_jump_increment(branch);
                    let residual = (self.point[k + 1][child.index] - predicted).abs();
                    if residual > RECONSTRUCTION_TOL {
                        return Err(Error::InconsistentDecomposition { node: child, residual });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the discrete change-of-variables identity for `e^{beta t} Y^2`
/// along every path and returns the maximum absolute residual.
///
/// On the lattice every process is pure-jump, so the identity is exact
/// telescoping: the ds-integrals of the piecewise-constant integrands are
/// summed in closed form and the residual is pure float roundoff.
pub fn galchouk_lenglart_check(
    lattice: &LatticeModel,
    semimartingale: &DiscreteSemimartingale,
    beta: f64,
) -> Result<f64> {
    semimartingale.check_reconstruction(lattice)?;
    let n = lattice.steps();
    let mut max_residual: f64 = 0.0;
    // Walks every leaf-to-root path; depth is small by construction.
    for leaf in 0..lattice.nodes_at(n) {
        // Node indices along the path, root first.
        let mut path = vec![0usize; n + 1];
        path[n] = leaf;
        for k in (0..n).rev() {
            path[k] = path[k + 1] / lattice.branching();
        }
        let mut rhs = semimartingale.point[0][0] * semimartingale.point[0][0];
        for k in 0..n {
            let idx = path[k];
            let t_k = lattice.time(k);
            let t_next = lattice.time(k + 1);
            let w_k = (beta * t_k).exp();
            let w_next = (beta * t_next).exp();
            let y = semimartingale.point[k][idx];
            let y_plus = semimartingale.right[k][idx];
            let branch = path[k + 1] % lattice.branching();
            let mart = semimartingale.z[k][idx] * lattice.brownian_increment(branch)
                + semimartingale
                    .k_jump
                    .as_ref()
                    .map_or(0.0, |kj| kj[k][idx] * lattice.compensated_jump_increment(branch));
            let interval = semimartingale.a[k][idx];
            let left_jump = interval + mart;
            let right_jump = y_plus - y;
            // ds-term: beta * int e^{beta s} Y_plus^2 ds over (t_k, t_{k+1}).
            rhs += y_plus * y_plus * (w_next - w_k);
            // 2 e^{beta t} Y_- d(A + M): A + M moves at t_{k+1}, Y_- there is Y_plus.
            rhs += 2.0 * w_next * y_plus * left_jump;
            // left-jump squares.
            rhs += w_next * left_jump * left_jump;
            // right-jump terms at t_k.
            rhs += 2.0 * w_k * y * right_jump;
            rhs += w_k * right_jump * right_jump;
        }
        let terminal = semimartingale.point[n][leaf];
        let lhs = (beta * lattice.time(n)).exp() * terminal * terminal;
        max_residual = max_residual.max((lhs - rhs).abs());
    }
    Ok(max_residual)
}


#[cfg(test)]
mod adapted_process_tests {
    use super::*;

    #[test]
    fn adapted_process_shapes_and_accessors() {
        let lat = build_lattice(TimeGrid::new(1.0, 2).unwrap(), Mode::Diffusion).unwrap();
        let process = AdaptedProcess::from_fn(&lat, |node| node.level as f64 + node.index as f64);
        assert_eq!(process.num_levels(), 3);
        assert_eq!(process.value(NodeId::new(2, 3)), 5.0);
        let constant = AdaptedProcess::constant(&lat, 1.5);
        assert!(constant.level(2).iter().all(|v| *v == 1.5));
        // Shape validation rejects ragged level vectors.
        assert!(AdaptedProcess::from_levels(&lat, vec![vec![0.0], vec![0.0; 3], vec![0.0; 4]]).is_err());
        assert!(AdaptedProcess::from_levels(&lat, vec![vec![0.0], vec![0.0; 2], vec![0.0; 4]]).is_ok());
    }
}
