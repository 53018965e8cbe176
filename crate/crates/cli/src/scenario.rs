//! JSON scenario files.
//!
//! Relative paths (weight files, grid files, `output_dir`) resolve against
//! the directory holding the config.

use std::path::{Path, PathBuf};

use mtclf_core::controller::{ControllerConfig, SigmaMode};
use mtclf_core::dynamics::{BoxRegion, SystemModel};
use mtclf_core::hjb_oracle::{coarse_polar_inputs, fine_polar_inputs, BackupStep, GridSpec};
use mtclf_core::simulation::SimulationConfig;
use mtclf_core::value_functions::{NeuralMlp, StateCost, TabulatedValue, TaskSpec, ValueBackend, ValueError};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ScenarioError {
    fn from_value(path: &Path, err: ValueError) -> Self {
        match err {
            ValueError::Io(source) => ScenarioError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => ScenarioError::Invalid(format!("{}: {other}", path.display())),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelFile {
    SingleIntegrator { dim: usize },
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BackendFile {
    AnalyticGoal { goal: Vec<f64>, cost_scale: f64 },
    MinGoal { goals: Vec<Vec<f64>>, cost_scale: f64 },
    Tabulated { path: PathBuf },
    Neural { path: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CostFile {
    Zero,
    Distance { goals: Vec<Vec<f64>>, scale: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    label: Option<String>,
    backend: BackendFile,
    /// Required for file backends; derived from the goals otherwise.
    cost: Option<CostFile>,
    #[serde(default)]
    discount: f64,
    goal_points: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ControllerFile {
    slack_weight: f64,
    priority_matrix: Option<Vec<Vec<f64>>>,
    sigma_mode: SigmaMode,
    active_tasks: Option<Vec<usize>>,
    box_invariance: bool,
    input_limit: Option<f64>,
    boundary_tol: f64,
    solver_tol: f64,
    max_iters: usize,
}

impl Default for ControllerFile {
    fn default() -> Self {
        let d = ControllerConfig::default();
        Self {
            slack_weight: d.slack_weight,
            priority_matrix: None,
            sigma_mode: d.sigma_mode,
            active_tasks: None,
            box_invariance: false,
            input_limit: None,
            boundary_tol: d.boundary_tol,
            solver_tol: d.solver_tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Value-iteration settings; the box comes from the scenario region.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HjbSettings {
    pub nodes_per_axis: usize,
    /// `fixed_time` pairs with the coarse input set, `grid_length` with the fine one.
    pub step: BackupStep,
    pub dt: f64,
    pub conv_tol: f64,
    pub max_sweeps: usize,
}

impl Default for HjbSettings {
    fn default() -> Self {
        Self {
            nodes_per_axis: 161,
            step: BackupStep::GridLength,
            dt: 0.05,
            conv_tol: 1e-6,
            max_sweeps: 20_000,
        }
    }
}

/// Thresholds for `verify`.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub samples: usize,
    pub seed: u64,
    /// Slack weight of the single-task recovery QPs.
    pub slack_weight: f64,
    /// Absolute `‖u_QP − u*‖` bound for closed-form backends.
    pub analytic_recovery_tol: f64,
    /// Relative `‖u_QP − u*‖ / ‖u*‖` bound for tabulated and neural backends.
    pub approx_recovery_tol: f64,
    pub fd_rel_tol: f64,
    pub analytic_residual_tol: f64,
    /// Bound on `|residual| / (¼‖L_g J̃‖² + |L_f J̃| + q + βJ̃)` for tabulated and neural backends.
    pub approx_residual_rel_tol: f64,
    /// Samples closer than this to a goal point are skipped.
    pub min_goal_distance: f64,
    /// Samples are drawn this far inside the region.
    pub boundary_margin: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            samples: 200,
            seed: 7,
            slack_weight: 1e6,
            analytic_recovery_tol: 1e-6,
            approx_recovery_tol: 0.05,
            fd_rel_tol: 1e-5,
            analytic_residual_tol: 1e-9,
            approx_residual_rel_tol: 0.05,
            min_goal_distance: 0.05,
            boundary_margin: 0.1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    model: ModelFile,
    tasks: Vec<TaskFile>,
    #[serde(default)]
    controller: ControllerFile,
    region: RegionFile,
    #[serde(default = "default_resolution")]
    grid_resolution: usize,
    #[serde(default)]
    simulation: SimulationConfig,
    #[serde(default)]
    hjb: HjbSettings,
    #[serde(default)]
    verify: VerifySettings,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
}

fn default_resolution() -> usize {
    201
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A loaded scenario with every path resolved and every file parsed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub tasks: Vec<TaskSpec>,
    pub controller: ControllerConfig,
    pub region: BoxRegion,
    pub grid_resolution: usize,
    pub simulation: SimulationConfig,
    pub hjb: HjbSettings,
    pub verify: VerifySettings,
    pub output_dir: PathBuf,
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(ScenarioError::Invalid(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

fn invalid(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(e.to_string())
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let model = match &file.model {
            ModelFile::SingleIntegrator { dim } => {
                if *dim == 0 {
                    return Err(invalid("single integrator needs dim >= 1"));
                }
                SystemModel::single_integrator(*dim)
            }
            ModelFile::Linear { a, b } => SystemModel::linear(matrix(a, "model.a")?, matrix(b, "model.b")?).map_err(invalid)?,
        };
        let region = BoxRegion::new(vector(&file.region.lower), vector(&file.region.upper)).map_err(invalid)?;
        if region.dim() != model.state_dim() {
            return Err(invalid(format!(
                "region has dimension {} but the model state has {}",
                region.dim(),
                model.state_dim()
            )));
        }
        if file.tasks.is_empty() {
            return Err(invalid("a scenario needs at least one task"));
        }
        let tasks = file
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| build_task(i, t, base))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(t) = tasks.iter().find(|t| t.dim() != model.state_dim()) {
            return Err(invalid(format!("task {} has dimension {}, model has {}", t.label, t.dim(), model.state_dim())));
        }

        let c = &file.controller;
        let controller = ControllerConfig {
            slack_weight: c.slack_weight,
            priority_matrix: c.priority_matrix.as_deref().map(|k| matrix(k, "controller.priority_matrix")).transpose()?,
            sigma_mode: c.sigma_mode,
            active_tasks: c.active_tasks.clone(),
            box_region: c.box_invariance.then(|| region.clone()),
            input_limit: c.input_limit,
            boundary_tol: c.boundary_tol,
            solver_tol: c.solver_tol,
            max_iters: c.max_iters,
        };
        let n_active = controller.active_tasks.as_ref().map_or(tasks.len(), Vec::len);
        if let Some(bad) = controller.active_tasks.iter().flatten().find(|&&i| i >= tasks.len()) {
            return Err(invalid(format!("active task {bad} out of range")));
        }
        controller.validate(n_active).map_err(invalid)?;
        file.simulation.validate().map_err(invalid)?;
        if file.grid_resolution < 2 {
            return Err(invalid("grid_resolution must be at least 2"));
        }
        if file.hjb.nodes_per_axis < 2 || !(file.hjb.dt > 0.0) || !(file.hjb.conv_tol > 0.0) || file.hjb.max_sweeps == 0 {
            return Err(invalid("hjb settings need nodes_per_axis >= 2 and positive dt, conv_tol, max_sweeps"));
        }
        Ok(Self {
            name: file.name.unwrap_or_else(|| "scenario".into()),
            model,
            tasks,
            controller,
            region,
            grid_resolution: file.grid_resolution,
            simulation: file.simulation,
            hjb: file.hjb,
            verify: file.verify,
            output_dir: base.join(&file.output_dir),
        })
    }

    /// Grid for solving `task` with the scenario's region and HJB settings.
    pub fn grid_spec(&self, task: usize) -> GridSpec {
        GridSpec {
            region: self.region.clone(),
            nodes_per_axis: [self.hjb.nodes_per_axis; 2],
            dt: self.hjb.dt,
            discount: self.tasks[task].discount,
            input_candidates: match self.hjb.step {
                BackupStep::FixedTime => coarse_polar_inputs(),
                BackupStep::GridLength => fine_polar_inputs(),
            },
            step: self.hjb.step,
            conv_tol: self.hjb.conv_tol,
            max_sweeps: self.hjb.max_sweeps,
        }
    }
}

fn build_task(index: usize, t: &TaskFile, base: &Path) -> Result<TaskSpec, ScenarioError> {
    let label = t.label.clone().unwrap_or_else(|| format!("J{}", index + 1));
    let ctx = |e: ValueError| invalid(format!("task {label}: {e}"));
    let (backend, derived_cost) = match &t.backend {
        BackendFile::AnalyticGoal { goal, cost_scale } => {
            let b = ValueBackend::analytic_goal(vector(goal), *cost_scale).map_err(ctx)?;
            let cost = StateCost::Distance {
                goals: vec![vector(goal)],
                scale: *cost_scale,
            };
            (b, Some(cost))
        }
        BackendFile::MinGoal { goals, cost_scale } => {
            let goals: Vec<_> = goals.iter().map(|g| vector(g)).collect();
            let b = ValueBackend::min_goal(goals.clone(), *cost_scale).map_err(ctx)?;
            (b, Some(StateCost::Distance { goals, scale: *cost_scale }))
        }
        BackendFile::Tabulated { path } => {
            let full = base.join(path);
            let table = TabulatedValue::read(&full).map_err(|e| ScenarioError::from_value(&full, e))?;
            (ValueBackend::Tabulated(table), None)
        }
        BackendFile::Neural { path } => {
            let full = base.join(path);
            let net = NeuralMlp::read(&full).map_err(|e| ScenarioError::from_value(&full, e))?;
            (ValueBackend::NeuralMlp(net), None)
        }
    };
    let cost = match &t.cost {
        Some(CostFile::Zero) => StateCost::Zero,
        Some(CostFile::Distance { goals, scale }) => {
            if !(*scale >= 0.0) {
                return Err(invalid(format!("task {label}: cost scale must be nonnegative")));
            }
            StateCost::Distance {
                goals: goals.iter().map(|g| vector(g)).collect(),
                scale: *scale,
            }
        }
        None => derived_cost.ok_or_else(|| invalid(format!("task {label}: file backends need an explicit cost")))?,
    };
    let goal_points = match (&t.goal_points, &cost) {
        (Some(points), _) => points.iter().map(|g| vector(g)).collect(),
        (None, StateCost::Distance { goals, .. }) => goals.clone(),
        (None, _) => Vec::new(),
    };
    TaskSpec::new(label.clone(), backend, cost, t.discount, goal_points).map_err(ctx)
}
