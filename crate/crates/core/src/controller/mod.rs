//! Slack-prioritized pointwise min-norm controller.
//!
//! At a state `x` the controller solves
//!
//! ```text
//!     minimize    ‖u‖² + κ ‖δ‖²
//!     subject to  L_f J̃ᵢ + L_g J̃ᵢ u <= −σᵢ + δᵢ    for each active task i
//!                 K δ >= 0
//!                 f(x) + g(x) u ∈ T_box(x)           (optional)
//!                 |u_k| <= limit                     (optional)
//! ```
//!
//! over the stacked decision vector `z = (u, δ)`.

pub mod active_set;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{BoxRegion, DynamicsError, SystemModel};
use crate::value_functions::{lie_derivatives, LieBundle, LieRow, TaskSpec, ValueError};

pub use active_set::{ActiveSetOptions, QpProblem, QpResult, QpStatus};

/// `‖L_g J̃‖` below which a task with positive value is reported as degenerate.
pub const DEGENERATE_LG: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("state lies outside the invariance box (axis {axis}: {value} not in [{lo}, {hi}])")]
    OutOfRegion { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("QP solver stopped with status {0:?}")]
    Solver(QpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `σ` for undiscounted value functions.
    #[default]
    Undiscounted,
    /// `σ̄`, which accounts for the discount rate.
    Discounted,
    /// `σ ≡ 0`: plain decrease constraints.
    Zero,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Slack weight `κ > 0`.
    pub slack_weight: f64,
    /// `K`; `None` means the identity, i.e. `δ >= 0`.
    pub priority_matrix: Option<DMatrix<f64>>,
    pub sigma_mode: SigmaMode,
    /// Task indices taking part; `None` means all.
    pub active_tasks: Option<Vec<usize>>,
    pub box_region: Option<BoxRegion>,
    /// Optional bound `‖u‖∞ <= limit`.
    pub input_limit: Option<f64>,
    /// Distance to a box face below which the face counts as active.
    pub boundary_tol: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            slack_weight: 1e6,
            priority_matrix: None,
            sigma_mode: SigmaMode::Undiscounted,
            active_tasks: None,
            box_region: None,
            input_limit: None,
            boundary_tol: 1e-9,
            solver_tol: 1e-9,
            max_iters: 500,
        }
    }
}

impl ControllerConfig {
    fn active_indices(&self, n_tasks: usize) -> Result<Vec<usize>, ControlError> {
        match &self.active_tasks {
            None => Ok((0..n_tasks).collect()),
            Some(list) => {
                if let Some(bad) = list.iter().find(|&&i| i >= n_tasks) {
                    return Err(ControlError::InvalidConfig(format!(
                        "active task {bad} out of range for {n_tasks} tasks"
                    )));
                }
                Ok(list.clone())
            }
        }
    }

    pub fn validate(&self, n_active: usize) -> Result<(), ControlError> {
        if !(self.slack_weight > 0.0) {
            return Err(ControlError::InvalidConfig("slack weight must be positive".into()));
        }
        if !(self.solver_tol > 0.0) || self.max_iters == 0 {
            return Err(ControlError::InvalidConfig(
                "solver tolerance and iteration budget must be positive".into(),
            ));
        }
        if let Some(k) = &self.priority_matrix {
            if k.ncols() != n_active {
                return Err(ControlError::InvalidConfig(format!(
                    "priority matrix has {} columns for {n_active} active tasks",
                    k.ncols()
                )));
            }
        }
        if let Some(limit) = self.input_limit {
            if !(limit > 0.0) {
                return Err(ControlError::InvalidConfig("input limit must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Events worth surfacing while building constraint offsets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SigmaDiagnostics {
    /// `σ̄` radicands that were negative and clamped to zero.
    pub clamped_radicands: usize,
    /// Tasks where `L_f J̃ − ½‖L_g J̃‖² > 0`, i.e. the unconstrained optimal
    /// input would increase `J̃`, so a tight `σ̄` constraint cannot reproduce it.
    pub ascent_tasks: Vec<usize>,
    /// Tasks with `J̃ > 0` but `‖L_g J̃‖ < DEGENERATE_LG`.
    pub degenerate_tasks: Vec<usize>,
}

/// `σ = √((L_f J̃)² + q ‖L_g J̃‖²)`.
pub fn sigma(row: &LieRow) -> f64 {
    (row.lf * row.lf + row.cost * row.lg_norm_sq()).sqrt()
}

/// `σ̄ = √(max(0, (L_f J̃)² + (q − β J̃) ‖L_g J̃‖²))`.
///
/// Equals [`sigma`] bit for bit when `β = 0`.
pub fn sigma_bar(row: &LieRow, discount: f64, diagnostics: &mut SigmaDiagnostics) -> f64 {
    let radicand = row.lf * row.lf + (row.cost - discount * row.value) * row.lg_norm_sq();
    if radicand < 0.0 {
        diagnostics.clamped_radicands += 1;
        return 0.0;
    }
    radicand.sqrt()
}

/// Unconstrained optimal input `−½ g(x)ᵀ ∇J̃(x)` for an identity input cost.
pub fn single_task_optimal_input(task: &TaskSpec, model: &SystemModel, x: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
    let g = model.eval_g(x)?;
    let grad = task.gradient(x)?;
    Ok(g.tr_mul(&grad) * -0.5)
}

/// Label of one inequality row of the controller QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    /// Decrease constraint of the task with this index.
    Task(usize),
    /// Row of `K δ >= 0`.
    Priority(usize),
    /// `(f + g u)_k <= 0` at an upper face.
    BoxUpper(usize),
    /// `(f + g u)_k >= 0` at a lower face.
    BoxLower(usize),
    InputUpper(usize),
    InputLower(usize),
}

/// One linear row over the input `u` alone: `coeffs · u <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRow {
    pub id: ConstraintId,
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

/// Tangent-cone rows of an axis-aligned box at `x`.
pub fn add_box_invariance_rows(
    model: &SystemModel,
    x: &DVector<f64>,
    region: &BoxRegion,
    boundary_tol: f64,
) -> Result<Vec<InputRow>, ControlError> {
    if region.dim() != x.len() {
        return Err(ControlError::Dynamics(DynamicsError::StateShape {
            expected: region.dim(),
            got: x.len(),
        }));
    }
    for axis in 0..x.len() {
        let (lo, hi) = (region.lower()[axis], region.upper()[axis]);
        if x[axis] < lo - boundary_tol || x[axis] > hi + boundary_tol {
            return Err(ControlError::OutOfRegion {
                axis,
                value: x[axis],
                lo,
                hi,
            });
        }
    }
    let f = model.eval_f(x)?;
    let g = model.eval_g(x)?;
    let mut rows = Vec::new();
    for k in 0..x.len() {
        let gk = g.row(k).transpose();
        if x[k] >= region.upper()[k] - boundary_tol {
            rows.push(InputRow {
                id: ConstraintId::BoxUpper(k),
                coeffs: gk.clone(),
                rhs: -f[k],
            });
        }
        if x[k] <= region.lower()[k] + boundary_tol {
            rows.push(InputRow {
                id: ConstraintId::BoxLower(k),
                coeffs: -gk,
                rhs: f[k],
            });
        }
    }
    Ok(rows)
}

/// Assembled controller QP over `z = (u, δ)`.
#[derive(Debug, Clone)]
pub struct QpData {
    pub problem: QpProblem,
    pub ids: Vec<ConstraintId>,
    pub input_dim: usize,
    /// Task index of each slack, in slack order.
    pub tasks: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// A feasible point when `K = I` and no extra rows are present.
    pub witness: DVector<f64>,
    pub diagnostics: SigmaDiagnostics,
    pub bundle: LieBundle,
}

/// Builds the QP from precomputed Lie derivatives.
pub fn build_qp_from_bundle(
    bundle: &LieBundle,
    discounts: &[f64],
    extra_rows: &[InputRow],
    config: &ControllerConfig,
) -> Result<QpData, ControlError> {
    let m = bundle.input_dim;
    let active = config.active_indices(bundle.len())?;
    config.validate(active.len())?;
    let n_slack = active.len();
    let dim = m + n_slack;

    let mut hessian = DMatrix::zeros(dim, dim);
    for k in 0..m {
        hessian[(k, k)] = 2.0;
    }
    for k in 0..n_slack {
        hessian[(m + k, m + k)] = 2.0 * config.slack_weight;
    }

    let mut diagnostics = SigmaDiagnostics::default();
    let mut rows: Vec<(ConstraintId, DVector<f64>, f64)> = Vec::new();
    let mut sigmas = Vec::with_capacity(n_slack);
    let mut witness = DVector::zeros(dim);
    for (slot, &task) in active.iter().enumerate() {
        let row = &bundle.rows[task];
        let offset = match config.sigma_mode {
            SigmaMode::Undiscounted => sigma(row),
            SigmaMode::Discounted => sigma_bar(row, discounts[task], &mut diagnostics),
            SigmaMode::Zero => 0.0,
        };
        if row.lf - 0.5 * row.lg_norm_sq() > 0.0 {
            diagnostics.ascent_tasks.push(task);
        }
        if row.value > 0.0 && row.lg.norm() < DEGENERATE_LG {
            diagnostics.degenerate_tasks.push(task);
        }
        let mut coeffs = DVector::zeros(dim);
        coeffs.rows_mut(0, m).copy_from(&row.lg);
        coeffs[m + slot] = -1.0;
        rows.push((ConstraintId::Task(task), coeffs, -row.lf - offset));
        witness[m + slot] = (row.lf + offset).max(0.0);
        sigmas.push(offset);
    }

    let priority = config
        .priority_matrix
        .clone()
        .unwrap_or_else(|| DMatrix::identity(n_slack, n_slack));
    for j in 0..priority.nrows() {
        let mut coeffs = DVector::zeros(dim);
        for k in 0..n_slack {
            coeffs[m + k] = -priority[(j, k)];
        }
        rows.push((ConstraintId::Priority(j), coeffs, 0.0));
    }

    for extra in extra_rows {
        let mut coeffs = DVector::zeros(dim);
        coeffs.rows_mut(0, m).copy_from(&extra.coeffs);
        rows.push((extra.id, coeffs, extra.rhs));
    }

    if let Some(limit) = config.input_limit {
        for k in 0..m {
            let mut up = DVector::zeros(dim);
            up[k] = 1.0;
            rows.push((ConstraintId::InputUpper(k), up.clone(), limit));
            rows.push((ConstraintId::InputLower(k), -up, limit));
        }
    }

    let constraints = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].1[c]);
    let bounds = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    Ok(QpData {
        problem: QpProblem::new(hessian, DVector::zeros(dim), constraints, bounds),
        ids: rows.into_iter().map(|r| r.0).collect(),
        input_dim: m,
        tasks: active,
        sigmas,
        witness,
        diagnostics,
        bundle: bundle.clone(),
    })
}

/// Evaluates Lie derivatives at `x` and assembles the controller QP.
pub fn build_qp(tasks: &[TaskSpec], model: &SystemModel, x: &DVector<f64>, config: &ControllerConfig) -> Result<QpData, ControlError> {
    let bundle = lie_derivatives(tasks, model, x)?;
    let discounts: Vec<f64> = tasks.iter().map(|t| t.discount).collect();
    let extra = match &config.box_region {
        Some(region) => add_box_invariance_rows(model, x, region, config.boundary_tol)?,
        None => Vec::new(),
    };
    build_qp_from_bundle(&bundle, &discounts, &extra, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub input: DVector<f64>,
    pub slacks: DVector<f64>,
    /// `‖u‖² + κ‖δ‖²`
    pub objective: f64,
    pub active_set: Vec<ConstraintId>,
    pub multipliers: Vec<(ConstraintId, f64)>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Previous solution carried along a trajectory.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub z: Option<DVector<f64>>,
    pub active: Vec<ConstraintId>,
}

pub fn solve_qp(data: &QpData, config: &ControllerConfig, warm: Option<&WarmStart>) -> QpSolution {
    let opts = ActiveSetOptions {
        tol: config.solver_tol,
        max_iters: config.max_iters,
    };
    let hint: Vec<usize> = warm
        .map(|w| {
            w.active
                .iter()
                .filter_map(|id| data.ids.iter().position(|x| x == id))
                .collect()
        })
        .unwrap_or_default();
    // Start from the slack witness; fall back on the previous point when it is feasible.
    let start = match warm.and_then(|w| w.z.as_ref()) {
        Some(z) if z.len() == data.problem.dim() && data.problem.max_violation(z) <= config.solver_tol => z.clone(),
        _ => data.witness.clone(),
    };
    let out = active_set::solve(&data.problem, Some(&start), &hint, &opts);
    let m = data.input_dim;
    let input = out.z.rows(0, m).into_owned();
    let slacks = out.z.rows(m, data.tasks.len()).into_owned();
    QpSolution {
        objective: out.objective,
        active_set: out.active.iter().map(|&i| data.ids[i]).collect(),
        multipliers: data.ids.iter().copied().zip(out.multipliers.iter().copied()).collect(),
        status: out.status,
        iterations: out.iterations,
        input,
        slacks,
    }
}

/// Everything computed for one control decision.
#[derive(Debug, Clone)]
pub struct ControlStep {
    pub solution: QpSolution,
    pub bundle: LieBundle,
    pub sigmas: Vec<f64>,
    pub active_tasks: Vec<usize>,
    pub diagnostics: SigmaDiagnostics,
}

impl ControlStep {
    pub fn warm_start(&self) -> WarmStart {
        let mut z = self.solution.input.clone().resize_vertically(self.solution.input.len() + self.solution.slacks.len(), 0.0);
        z.rows_mut(self.solution.input.len(), self.solution.slacks.len())
            .copy_from(&self.solution.slacks);
        WarmStart {
            z: Some(z),
            active: self.solution.active_set.clone(),
        }
    }
}

/// Full controller evaluation, failing unless the QP solved to optimality.
pub fn control_step(
    tasks: &[TaskSpec],
    model: &SystemModel,
    x: &DVector<f64>,
    config: &ControllerConfig,
    warm: Option<&WarmStart>,
) -> Result<ControlStep, ControlError> {
    let data = build_qp(tasks, model, x, config)?;
    let solution = solve_qp(&data, config, warm);
    if solution.status != QpStatus::Optimal {
        return Err(ControlError::Solver(solution.status));
    }
    Ok(ControlStep {
        solution,
        bundle: data.bundle,
        sigmas: data.sigmas,
        active_tasks: data.tasks,
        diagnostics: data.diagnostics,
    })
}

/// The min-norm input at `x`.
pub fn control(tasks: &[TaskSpec], model: &SystemModel, x: &DVector<f64>, config: &ControllerConfig) -> Result<DVector<f64>, ControlError> {
    Ok(control_step(tasks, model, x, config, None)?.solution.input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn row(value: f64, cost: f64, lf: f64, lg: DVector<f64>) -> LieRow {
        LieRow::new(value, cost, lf, lg)
    }

    fn example_task() -> TaskSpec {
        TaskSpec::analytic_goal("j1", dvector![-1.5, 1.5], 5.0).unwrap()
    }

    #[test]
    fn sigma_examples() {
        // r = 1 from the goal: ‖∇J̃‖² = 20 and q = 5.
        let r = row(4.0 * 5f64.sqrt() / 3.0, 5.0, 0.0, dvector![0.0, -2.0 * 5f64.sqrt()]);
        assert!((sigma(&r) - 10.0).abs() < 1e-12);
        assert_eq!(sigma(&row(1.0, 7.0, -3.0, dvector![0.0, 0.0])), 3.0);
        assert_eq!(sigma(&row(0.0, 0.0, 0.0, dvector![0.0, 0.0])), 0.0);
    }

    #[test]
    fn sigma_bar_clamps_negative_radicand() {
        let mut diag = SigmaDiagnostics::default();
        // L_f = 0, ‖L_g‖² = 4, q = 1, β·J̃ = 2
        let r = row(4.0, 1.0, 0.0, dvector![2.0, 0.0]);
        assert_eq!(sigma_bar(&r, 0.5, &mut diag), 0.0);
        assert_eq!(diag.clamped_radicands, 1);
    }

    #[test]
    fn sigma_bar_on_exact_hjb_row_is_absolute_flow() {
        // Construct a row satisfying ¼‖L_g‖² − L_f = q − βJ̃.
        let lg: DVector<f64> = dvector![1.2, -0.4];
        let (lf, beta, value): (f64, f64, f64) = (-0.3, 0.5, 0.8);
        let cost = 0.25 * lg.norm_squared() - lf + beta * value;
        let mut diag = SigmaDiagnostics::default();
        let expected = (lf - 0.5 * lg.norm_squared()).abs();
        assert!((sigma_bar(&row(value, cost, lf, lg), beta, &mut diag) - expected).abs() < 1e-12);
        assert_eq!(diag.clamped_radicands, 0);
    }

    #[test]
    fn optimal_input_examples() {
        let model = SystemModel::single_integrator(2);
        let task = example_task();
        let u = single_task_optimal_input(&task, &model, &dvector![-1.5, 0.5]).unwrap();
        assert!(u[0].abs() < 1e-15);
        assert!((u[1] - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(single_task_optimal_input(&task, &model, &dvector![-1.5, 1.5]).unwrap(), dvector![0.0, 0.0]);

        let deficient = SystemModel::linear(DMatrix::zeros(2, 2), nalgebra::dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        let g = deficient.eval_g(&dvector![0.0, 0.0]).unwrap();
        assert_eq!(g.tr_mul(&dvector![4.0, 6.0]) * -0.5, dvector![-2.0, 0.0]);
    }

    #[test]
    fn build_qp_single_task_row() {
        let model = SystemModel::single_integrator(2);
        let data = build_qp(&[example_task()], &model, &dvector![-1.5, 0.5], &ControllerConfig::default()).unwrap();
        assert_eq!(data.ids, vec![ConstraintId::Task(0), ConstraintId::Priority(0)]);
        let a = data.problem.constraints.row(0);
        assert!(a[0].abs() < 1e-15);
        assert!((a[1] + 2.0 * 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(a[2], -1.0);
        assert!((data.problem.bounds[0] + 10.0).abs() < 1e-12);
        // −δ <= 0
        assert_eq!(data.problem.constraints.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn default_priority_gives_nonnegative_slacks() {
        let bundle = LieBundle::from_parts(2, &[(0.0, vec![1.0, 0.0], 1.0), (0.0, vec![0.0, 1.0], 1.0), (0.0, vec![1.0, 1.0], 1.0)]);
        let data = build_qp_from_bundle(&bundle, &[0.0; 3], &[], &ControllerConfig::default()).unwrap();
        let priority: Vec<_> = data.ids.iter().filter(|id| matches!(id, ConstraintId::Priority(_))).collect();
        assert_eq!(priority.len(), 3);
    }

    #[test]
    fn zero_tasks_with_box_only_has_cone_rows() {
        let model = SystemModel::single_integrator(2);
        let region = BoxRegion::cube(2, -1.0, 1.0).unwrap();
        let config = ControllerConfig {
            box_region: Some(region),
            ..Default::default()
        };
        let data = build_qp(&[], &model, &dvector![1.0, 0.2], &config).unwrap();
        assert_eq!(data.ids, vec![ConstraintId::BoxUpper(0)]);
        assert_eq!(data.problem.dim(), 2);
    }

    #[test]
    fn box_rows() {
        let model = SystemModel::single_integrator(2);
        let region = BoxRegion::cube(2, -1.0, 1.0).unwrap();
        assert!(add_box_invariance_rows(&model, &dvector![0.0, 0.5], &region, 1e-9).unwrap().is_empty());
        let face = add_box_invariance_rows(&model, &dvector![1.0, 0.5], &region, 1e-9).unwrap();
        assert_eq!(face, vec![InputRow { id: ConstraintId::BoxUpper(0), coeffs: dvector![1.0, 0.0], rhs: 0.0 }]);
        let corner = add_box_invariance_rows(&model, &dvector![1.0, 1.0], &region, 1e-9).unwrap();
        assert_eq!(corner.len(), 2);
        assert_eq!(corner[1].coeffs, dvector![0.0, 1.0]);
        let lower = add_box_invariance_rows(&model, &dvector![-1.0, 0.0], &region, 1e-9).unwrap();
        assert_eq!(lower[0].id, ConstraintId::BoxLower(0));
        assert_eq!(lower[0].coeffs, dvector![-1.0, 0.0]);
        assert!(matches!(
            add_box_invariance_rows(&model, &dvector![1.5, 0.0], &region, 1e-9),
            Err(ControlError::OutOfRegion { axis: 0, .. })
        ));
    }

    #[test]
    fn box_rows_include_drift() {
        let model = SystemModel::linear(nalgebra::dmatrix![0.0, 1.0; 0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let region = BoxRegion::cube(2, -1.0, 1.0).unwrap();
        let rows = add_box_invariance_rows(&model, &dvector![1.0, 0.5], &region, 1e-9).unwrap();
        // ẋ₁ = x₂ + u₁ <= 0
        assert_eq!(rows[0].rhs, -0.5);
    }

    #[test]
    fn single_task_qp_recovers_optimal_input() {
        let model = SystemModel::single_integrator(2);
        let x = dvector![-1.5, 0.5];
        let step = control_step(&[example_task()], &model, &x, &ControllerConfig::default(), None).unwrap();
        assert!((step.solution.input.clone() - dvector![0.0, 5f64.sqrt()]).norm() < 1e-6);
        assert!(step.solution.slacks[0].abs() < 1e-5);
        assert!(step.solution.active_set.contains(&ConstraintId::Task(0)));
    }

    #[test]
    fn antipodal_tasks_split_the_slack() {
        // Tasks with L_g = ±(1, 0), L_f = 0, σ = 1, κ = 1. By symmetry u = 0,
        // and the KKT system of min δ₁² + δ₂² s.t. δᵢ >= 1 gives δ = (1, 1).
        let bundle = LieBundle::new(
            2,
            vec![row(1.0, 1.0, 0.0, dvector![1.0, 0.0]), row(1.0, 1.0, 0.0, dvector![-1.0, 0.0])],
        );
        let config = ControllerConfig {
            slack_weight: 1.0,
            ..Default::default()
        };
        let data = build_qp_from_bundle(&bundle, &[0.0, 0.0], &[], &config).unwrap();
        assert_eq!(data.sigmas, vec![1.0, 1.0]);
        let sol = solve_qp(&data, &config, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.input.norm() < 1e-12);
        assert!((sol.slacks.clone() - dvector![1.0, 1.0]).norm() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tasks_at_shared_goal_give_zero_input() {
        let model = SystemModel::single_integrator(2);
        let goal = dvector![1.5, -1.5];
        let tasks = vec![
            TaskSpec::analytic_goal("a", goal.clone(), 5.0).unwrap(),
            TaskSpec::min_goal("b", vec![dvector![-1.5, 1.5], goal.clone()], 5.0).unwrap(),
        ];
        let u = control(&tasks, &model, &goal, &ControllerConfig::default()).unwrap();
        assert_eq!(u.norm(), 0.0);
    }

    #[test]
    fn box_rows_can_make_the_qp_infeasible() {
        let region = BoxRegion::cube(1, -1.0, 1.0).unwrap();
        let config = ControllerConfig {
            box_region: Some(region),
            input_limit: Some(1.0),
            priority_matrix: Some(DMatrix::zeros(1, 0)),
            ..Default::default()
        };
        // u <= -2 contradicts the input limit u >= -1.
        let bundle = LieBundle::new(1, vec![]);
        let extra = vec![
            InputRow { id: ConstraintId::BoxUpper(0), coeffs: dvector![1.0], rhs: -2.0 },
        ];
        let data = build_qp_from_bundle(&bundle, &[], &extra, &config).unwrap();
        assert_eq!(solve_qp(&data, &config, None).status, QpStatus::Infeasible);
    }

    #[test]
    fn config_validation() {
        let bundle = LieBundle::from_parts(2, &[(0.0, vec![1.0, 0.0], 1.0)]);
        let bad_k = ControllerConfig {
            priority_matrix: Some(DMatrix::identity(2, 2)),
            ..Default::default()
        };
        assert!(matches!(build_qp_from_bundle(&bundle, &[0.0], &[], &bad_k), Err(ControlError::InvalidConfig(_))));
        let bad_kappa = ControllerConfig {
            slack_weight: 0.0,
            ..Default::default()
        };
        assert!(build_qp_from_bundle(&bundle, &[0.0], &[], &bad_kappa).is_err());
        let bad_active = ControllerConfig {
            active_tasks: Some(vec![3]),
            ..Default::default()
        };
        assert!(build_qp_from_bundle(&bundle, &[0.0], &[], &bad_active).is_err());
    }

    #[test]
    fn degenerate_task_is_kept_and_flagged() {
        let bundle = LieBundle::new(2, vec![row(2.0, 1.0, 0.0, dvector![0.0, 0.0])]);
        let data = build_qp_from_bundle(&bundle, &[0.0], &[], &ControllerConfig::default()).unwrap();
        assert_eq!(data.diagnostics.degenerate_tasks, vec![0]);
        assert_eq!(data.ids[0], ConstraintId::Task(0));
    }
}
