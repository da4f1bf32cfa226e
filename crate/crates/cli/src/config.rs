//! Scenario configuration: JSON schema and construction of the lattice,
//! driver and obstacle it describes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rbsde_core::expectation::{DependsOn, Driver};
use rbsde_core::lattice::{build_lattice, LadlagProcess, LatticeModel, Mode, NodeId, TimeGrid};
use rbsde_core::rbsde::{BetaSpec, SolverParams};
use rbsde_core::rng::SplitMix64;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub mode: ModeConfig,
    pub driver: DriverConfig,
    pub obstacle: ObstacleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Diffusion,
    Jump(JumpConfig),
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct JumpConfig {
    pub lambda: f64,
    #[serde(default = "default_mark")]
    pub mark: f64,
}

fn default_mark() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DriverConfig {
    /// One of "zero", "linear", "abs_z", or "custom:<id>".
    pub kind: String,
    #[serde(default)]
    pub params: DriverParams,
    /// Optional override of the declared Lipschitz constant.
    #[serde(rename = "K", default)]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct DriverParams {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self { a: 0.0, b: 0.0, c: 0.0, scale: default_scale(), offset: 0.0, theta: default_theta() }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_theta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ObstacleConfig {
    #[serde(flatten)]
    pub kind: ObstacleKind,
    /// Level-wide overrides: at `time_index`, pin the point value and the
    /// right limit of every node.
    #[serde(default)]
    pub right_jumps: Vec<RightJumpSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleKind {
    Constant {
        value: f64,
    },
    /// A deterministic ladlag step function of time: `values[j]` is the
    /// point value at anchor time `j*T/M` (M = values.len()-1) and
    /// `right_limits[j]` the constant value on the following open interval
    /// (defaults to the point values). Grid steps must be a multiple of M.
    DeterministicTable {
        values: Vec<f64>,
        #[serde(default)]
        right_limits: Option<Vec<f64>>,
    },
    /// Payoff of a compiled-in functional of the path statistics.
    Functional {
        payoff: String,
        #[serde(default)]
        strike: f64,
    },
    Random {
        seed: u64,
        bounds: [f64; 2],
        #[serde(default = "default_jump_fraction")]
        right_jump_fraction: f64,
    },
}

fn default_jump_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct RightJumpSpec {
    pub time_index: usize,
    pub point: f64,
    pub right_limit: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Default for AutoOr {
    fn default() -> Self {
        AutoOr::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    Auto,
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub beta: AutoOr,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(rename = "L", default)]
    pub l_factor: AutoOr,
    #[serde(default = "default_oracle")]
    pub oracle: OracleChoice,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    50
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_oracle() -> OracleChoice {
    OracleChoice::Auto
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: AutoOr::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            epsilon: default_epsilon(),
            l_factor: AutoOr::default(),
            oracle: default_oracle(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
pub struct OutputsConfig {
    #[serde(default)]
    pub solution_csv: Option<PathBuf>,
    #[serde(default)]
    pub report_json: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeConfig::Diffusion => Mode::Diffusion,
            ModeConfig::Jump(JumpConfig { lambda, mark }) => {
                Mode::DiffusionPlusJump { intensity: lambda, mark }
            }
        }
    }

    pub fn build_lattice(&self) -> Result<LatticeModel, CliError> {
        self.build_lattice_with_steps(self.grid.steps)
    }

    pub fn build_lattice_with_steps(&self, steps: usize) -> Result<LatticeModel, CliError> {
        let grid = TimeGrid::new(self.grid.horizon, steps).map_err(CliError::validation)?;
        build_lattice(grid, self.mode()).map_err(CliError::validation)
    }

    pub fn build_driver(&self) -> Result<Driver, CliError> {
        let p = self.driver.params;
        let driver = match self.driver.kind.as_str() {
            "zero" => Driver::zero(),
            "linear" => Driver::linear(p.a, p.b, p.c),
            "abs_z" => Driver::abs_z(p.scale, p.offset),
            other => match other.strip_prefix("custom:") {
                Some("jump_linear") => {
                    let lambda = match self.mode() {
                        Mode::DiffusionPlusJump { intensity, .. } => intensity,
                        Mode::Diffusion => {
                            return Err(CliError::Config(
                                "custom:jump_linear needs jump mode".into(),
                            ))
                        }
                    };
                    Driver::jump_linear(p.a, p.b, p.theta, lambda)
                }
                Some("tanh_y") => Driver::custom(
                    "tanh_y",
                    p.scale.abs(),
                    DependsOn { y: true, z: false, jump: false },
                    move |_, y, _, _| p.scale * y.tanh() + p.offset,
                ),
                Some(unknown) => {
                    return Err(CliError::Config(format!(
                        "unknown custom driver id {unknown:?} (registry: jump_linear, tanh_y)"
                    )))
                }
                None => {
                    return Err(CliError::Config(format!(
                        "unknown driver kind {other:?} (expected zero | linear | abs_z | custom:<id>)"
                    )))
                }
            },
        };
        // A declared K in the config overrides the registry's constant.
        match self.driver.lipschitz {
            Some(k) if k >= 0.0 => Ok(driver.with_declared_lipschitz(k)),
            Some(k) => Err(CliError::Config(format!("declared K = {k} must be nonnegative"))),
            None => Ok(driver),
        }
    }

    pub fn build_obstacle(&self, lattice: &LatticeModel) -> Result<LadlagProcess, CliError> {
        let n = lattice.steps();
        let mut obstacle = match &self.obstacle.kind {
            ObstacleKind::Constant { value } => LadlagProcess::constant(lattice, *value),
            ObstacleKind::DeterministicTable { values, right_limits } => {
                build_table_obstacle(lattice, values, right_limits.as_deref())?
            }
            ObstacleKind::Functional { payoff, strike } => {
                build_functional_obstacle(lattice, payoff, *strike)?
            }
            ObstacleKind::Random { seed, bounds, right_jump_fraction } => {
                random_obstacle(lattice, *seed, bounds[0], bounds[1], *right_jump_fraction, false)
            }
        };
        for jump in &self.obstacle.right_jumps {
            if jump.time_index >= n {
                return Err(CliError::Config(format!(
                    "right_jumps time_index {} out of range (non-terminal levels are 0..{n})",
                    jump.time_index
                )));
            }
            for node in lattice.level_nodes(jump.time_index) {
                obstacle.set_point(node, jump.point);
                obstacle.set_right(node, jump.right_limit);
            }
        }
        let violations = rbsde_core::lattice::validate_ladlag(lattice, &obstacle);
        if !violations.is_empty() {
            let words: Vec<String> =
                violations.iter().take(8).map(|v| lattice.path_word(*v)).collect();
            return Err(CliError::Validation(format!(
                "obstacle violates right upper-semicontinuity at {} node(s): {words:?}",
                violations.len()
            )));
        }
        Ok(obstacle)
    }

    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            beta: match self.solver.beta {
                AutoOr::Auto(_) => BetaSpec::Auto,
                AutoOr::Value(b) => BetaSpec::Fixed(b),
            },
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
        }
    }
}

fn build_table_obstacle(
    lattice: &LatticeModel,
    values: &[f64],
    right_limits: Option<&[f64]>,
) -> Result<LadlagProcess, CliError> {
    let n = lattice.steps();
    if values.len() < 2 {
        return Err(CliError::Config(
            "deterministic_table needs at least the two endpoint anchors".into(),
        ));
    }
    let anchors = values.len() - 1;
    if !n.is_multiple_of(anchors) {
        return Err(CliError::Config(format!(
            "grid N = {n} must be a multiple of the table anchor count {anchors}"
        )));
    }
    let defaults: Vec<f64> = values[..anchors].to_vec();
    let rights = right_limits.unwrap_or(&defaults);
    if rights.len() != anchors {
        return Err(CliError::Config(format!(
            "right_limits must have {anchors} entries (one per open interval), got {}",
            rights.len()
        )));
    }
    let stride = n / anchors;
    let mut point_by_level = vec![0.0; n + 1];
    let mut right_by_level = vec![0.0; n];
    for k in 0..=n {
        let (point, right) = if k % stride == 0 {
            let j = k / stride;
            (values[j], if j < anchors { rights[j] } else { values[j] })
        } else {
            let j = k / stride;
            (rights[j], rights[j])
        };
        point_by_level[k] = point;
        if k < n {
            right_by_level[k] = right;
        }
    }
    let point: Vec<Vec<f64>> = (0..=n).map(|k| vec![point_by_level[k]; lattice.nodes_at(k)]).collect();
    let right: Vec<Vec<f64>> = (0..n).map(|k| vec![right_by_level[k]; lattice.nodes_at(k)]).collect();
    LadlagProcess::new(lattice, point, right).map_err(CliError::validation)
}

/// Point values and right limits per level of a deterministic obstacle.
pub type LevelObstacle = (Vec<f64>, Vec<f64>);

/// Level-by-level deterministic values of a table obstacle, for the
/// O(N) fast path.
pub fn table_obstacle_levels(
    config: &ScenarioConfig,
    steps: usize,
) -> Result<Option<LevelObstacle>, CliError> {
    match &config.obstacle.kind {
        ObstacleKind::Constant { value } => {
            let mut point = vec![*value; steps + 1];
            let mut right = vec![*value; steps];
            apply_level_jumps(config, steps, &mut point, &mut right)?;
            Ok(Some((point, right)))
        }
        ObstacleKind::DeterministicTable { values, right_limits } => {
            let anchors = values.len() - 1;
            if values.len() < 2 || !steps.is_multiple_of(anchors) {
                return Err(CliError::Config(format!(
                    "grid N = {steps} must be a multiple of the table anchor count {anchors}"
                )));
            }
            let defaults: Vec<f64> = values[..anchors].to_vec();
            let rights = right_limits.as_deref().unwrap_or(&defaults);
            if rights.len() != anchors {
                return Err(CliError::Config(format!(
                    "right_limits must have {anchors} entries, got {}",
                    rights.len()
                )));
            }
            let stride = steps / anchors;
            let mut point = vec![0.0; steps + 1];
            let mut right = vec![0.0; steps];
            for k in 0..=steps {
                let j = k / stride;
                let (p, r) = if k % stride == 0 {
                    (values[j], if j < anchors { rights[j] } else { values[j] })
                } else {
                    (rights[j], rights[j])
                };
                point[k] = p;
                if k < steps {
                    right[k] = r;
                }
            }
            apply_level_jumps(config, steps, &mut point, &mut right)?;
            Ok(Some((point, right)))
        }
        _ => Ok(None),
    }
}

fn apply_level_jumps(
    config: &ScenarioConfig,
    steps: usize,
    point: &mut [f64],
    right: &mut [f64],
) -> Result<(), CliError> {
    for jump in &config.obstacle.right_jumps {
        if jump.time_index >= steps {
            return Err(CliError::Config(format!(
                "right_jumps time_index {} out of range",
                jump.time_index
            )));
        }
        point[jump.time_index] = jump.point;
        right[jump.time_index] = jump.right_limit;
    }
    if let Some(k) = (0..steps).find(|&k| right[k] > point[k]) {
        return Err(CliError::Validation(format!(
            "obstacle violates right upper-semicontinuity at level {k}"
        )));
    }
    Ok(())
}

fn build_functional_obstacle(
    lattice: &LatticeModel,
    payoff: &str,
    strike: f64,
) -> Result<LadlagProcess, CliError> {
    let eval: fn(f64, f64, f64) -> f64 = match payoff {
        "w" => |w, _, _| w,
        "put" => |w, _, strike| (strike - w).max(0.0),
        "call" => |w, _, strike| (w - strike).max(0.0),
        "running_max" => |_, max_w, _| max_w,
        other => {
            return Err(CliError::Config(format!(
                "unknown payoff id {other:?} (registry: w, put, call, running_max)"
            )))
        }
    };
    let n = lattice.steps();
    // Walk the tree accumulating (W, running max of W) per node.
    let mut stats: Vec<Vec<(f64, f64)>> = vec![vec![(0.0, 0.0)]];
    for k in 0..n {
        let mut next = vec![(0.0, 0.0); lattice.nodes_at(k + 1)];
        for node in lattice.level_nodes(k) {
            let (w, max_w) = stats[k][node.index];
            for branch in 0..lattice.branching() {
                let child = lattice.child(node, branch);
                let w_child = w + lattice.brownian_increment(branch);
                next[child.index] = (w_child, max_w.max(w_child));
            }
        }
        stats.push(next);
    }
    let point: Vec<Vec<f64>> = (0..=n)
        .map(|k| stats[k].iter().map(|(w, m)| eval(*w, *m, strike)).collect())
        .collect();
    LadlagProcess::right_continuous(lattice, point).map_err(CliError::validation)
}

/// Seeded r.u.s.c. obstacle: point values uniform in the bounds, right
/// limits equal to the point value except at a `fraction` of the nodes,
/// where they drop uniformly towards the lower bound. With `force_jump`
/// at least one strict right jump is guaranteed.
pub fn random_obstacle(
    lattice: &LatticeModel,
    seed: u64,
    lo: f64,
    hi: f64,
    fraction: f64,
    force_jump: bool,
) -> LadlagProcess {
    let n = lattice.steps();
    let mut rng = SplitMix64::new(seed);
    let point: Vec<Vec<f64>> = (0..=n)
        .map(|k| (0..lattice.nodes_at(k)).map(|_| rng.uniform(lo, hi)).collect())
        .collect();
    let mut right: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..lattice.nodes_at(k))
                .map(|i| {
                    let p = point[k][i];
                    if rng.next_bool(fraction) {
                        rng.uniform(lo, p)
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect();
    if force_jump && n > 0 {
        let has_jump = (0..n)
            .any(|k| (0..lattice.nodes_at(k)).any(|i| right[k][i] < point[k][i]));
        if !has_jump {
            let k = rng.next_index(n);
            let i = rng.next_index(lattice.nodes_at(k));
            right[k][i] = point[k][i] - 0.25 * (hi - lo).abs() - 1e-3;
        }
    }
    LadlagProcess::new(lattice, point, right).expect("generator keeps right <= point")
}

/// Path word helper for witnesses.
pub fn word_of(lattice: &LatticeModel, node: NodeId) -> String {
    lattice.path_word(node)
}
