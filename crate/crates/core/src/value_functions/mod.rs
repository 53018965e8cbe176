//! Value-function backends, task metadata and Lie derivatives.
//!
//! Every task carries a cost-to-go approximation `J̃ ≥ 0` together with the
//! state cost `q ≥ 0` and discount rate `β` it was trained with. The input
//! cost is fixed to `‖u‖²`, so the HJB equation that an exact value function
//! satisfies reads `¼ ‖L_g J̃‖² − L_f J̃ = q − β J̃`.

mod neural;
mod tabulated;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{DynamicsError, SystemModel};

pub use neural::{Activation, DenseLayer, NeuralMlp};
pub use tabulated::TabulatedValue;

/// Goal-point tolerance for the closed-form backends.
pub const ANALYTIC_VALUE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("state has length {got}, backend expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("coordinate {axis} = {value} lies outside the tabulated range [{lo}, {hi}]")]
    OutOfDomain { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("invalid backend: {0}")]
    InvalidBackend(String),
    #[error("goal point {index} of task `{label}` has value {value} above tolerance {tol}")]
    GoalNotMinimal {
        label: String,
        index: usize,
        value: f64,
        tol: f64,
    },
    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type CostFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Nonnegative state cost `q(x)`.
#[derive(Clone)]
pub enum StateCost {
    Zero,
    /// `scale · min_j ‖x − goal_j‖`.
    Distance { goals: Vec<DVector<f64>>, scale: f64 },
    Custom(CostFn),
}

impl fmt::Debug for StateCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateCost::Zero => write!(f, "Zero"),
            StateCost::Distance { goals, scale } => f
                .debug_struct("Distance")
                .field("goals", &goals.len())
                .field("scale", scale)
                .finish(),
            StateCost::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl StateCost {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            StateCost::Zero => 0.0,
            StateCost::Distance { goals, scale } => {
                scale * goals.iter().map(|g| x.metric_distance(g)).fold(f64::INFINITY, f64::min)
            }
            StateCost::Custom(q) => q(x),
        }
    }
}

/// Cost-to-go approximation with an exact gradient.
#[derive(Debug, Clone)]
pub enum ValueBackend {
    /// `(4√κ/3) ‖x − goal‖^{3/2}`: the exact solution for `q = κ‖x − goal‖`
    /// on a single integrator without discount.
    AnalyticGoal { goal: DVector<f64>, cost_scale: f64 },
    /// Pointwise minimum of [`ValueBackend::AnalyticGoal`] branches.
    MinGoal { goals: Vec<DVector<f64>>, cost_scale: f64 },
    Tabulated(TabulatedValue),
    NeuralMlp(NeuralMlp),
}

fn analytic_coefficient(cost_scale: f64) -> f64 {
    4.0 * cost_scale.sqrt() / 3.0
}

fn analytic_value(goal: &DVector<f64>, cost_scale: f64, x: &DVector<f64>) -> f64 {
    let r = (x - goal).norm();
    analytic_coefficient(cost_scale) * r * r.sqrt()
}

fn analytic_gradient(goal: &DVector<f64>, cost_scale: f64, x: &DVector<f64>) -> DVector<f64> {
    let d = x - goal;
    let r = d.norm();
    if r == 0.0 {
        return DVector::zeros(x.len());
    }
    // ∇J = 2√κ · √r · (x − goal)/r
    d * (2.0 * cost_scale.sqrt() / r.sqrt())
}

impl ValueBackend {
    pub fn analytic_goal(goal: DVector<f64>, cost_scale: f64) -> Result<Self, ValueError> {
        if !(cost_scale > 0.0) || goal.is_empty() {
            return Err(ValueError::InvalidBackend(
                "analytic goal needs a nonempty goal and positive cost scale".into(),
            ));
        }
        Ok(ValueBackend::AnalyticGoal { goal, cost_scale })
    }

    pub fn min_goal(goals: Vec<DVector<f64>>, cost_scale: f64) -> Result<Self, ValueError> {
        if !(cost_scale > 0.0) || goals.is_empty() {
            return Err(ValueError::InvalidBackend(
                "min-goal needs at least one goal and a positive cost scale".into(),
            ));
        }
        let n = goals[0].len();
        if n == 0 || goals.iter().any(|g| g.len() != n) {
            return Err(ValueError::InvalidBackend("goals must share one positive dimension".into()));
        }
        Ok(ValueBackend::MinGoal { goals, cost_scale })
    }

    /// State dimension the backend accepts.
    pub fn dim(&self) -> usize {
        match self {
            ValueBackend::AnalyticGoal { goal, .. } => goal.len(),
            ValueBackend::MinGoal { goals, .. } => goals[0].len(),
            ValueBackend::Tabulated(t) => t.dim(),
            ValueBackend::NeuralMlp(net) => net.input_dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ValueBackend::AnalyticGoal { .. } => "analytic_goal",
            ValueBackend::MinGoal { .. } => "min_goal",
            ValueBackend::Tabulated(_) => "tabulated",
            ValueBackend::NeuralMlp(_) => "neural",
        }
    }

    /// Closed-form backends use tight analytic tolerances; the others are approximations.
    pub fn is_analytic(&self) -> bool {
        matches!(self, ValueBackend::AnalyticGoal { .. } | ValueBackend::MinGoal { .. })
    }

    fn check_shape(&self, x: &DVector<f64>) -> Result<(), ValueError> {
        let expected = self.dim();
        if x.len() != expected {
            return Err(ValueError::Shape { expected, got: x.len() });
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, ValueError> {
        self.check_shape(x)?;
        match self {
            ValueBackend::AnalyticGoal { goal, cost_scale } => Ok(analytic_value(goal, *cost_scale, x)),
            ValueBackend::MinGoal { goals, cost_scale } => Ok(goals
                .iter()
                .map(|g| analytic_value(g, *cost_scale, x))
                .fold(f64::INFINITY, f64::min)),
            ValueBackend::Tabulated(t) => t.value(x),
            ValueBackend::NeuralMlp(net) => Ok(net.value(x)),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ValueError> {
        self.check_shape(x)?;
        match self {
            ValueBackend::AnalyticGoal { goal, cost_scale } => Ok(analytic_gradient(goal, *cost_scale, x)),
            ValueBackend::MinGoal { goals, cost_scale } => {
                let nearest = nearest_goal(goals, x);
                Ok(analytic_gradient(&goals[nearest], *cost_scale, x))
            }
            ValueBackend::Tabulated(t) => t.gradient(x),
            ValueBackend::NeuralMlp(net) => Ok(net.gradient(x)),
        }
    }

    /// True where the backend is known to be non-differentiable: the
    /// equidistant locus of a [`ValueBackend::MinGoal`].
    pub fn is_nonsmooth_at(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            ValueBackend::MinGoal { goals, .. } if goals.len() > 1 => {
                let mut d: Vec<f64> = goals.iter().map(|g| (x - g).norm()).collect();
                d.sort_by(f64::total_cmp);
                d[1] - d[0] <= tol
            }
            _ => false,
        }
    }
}

/// Index of the nearest goal, lowest index on ties.
fn nearest_goal(goals: &[DVector<f64>], x: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in goals.iter().enumerate() {
        let d = (x - g).norm();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// One learned task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub label: String,
    pub value_fn: ValueBackend,
    pub state_cost: StateCost,
    /// Discount rate `β ≥ 0`.
    pub discount: f64,
    /// States where `q = 0`.
    pub goal_points: Vec<DVector<f64>>,
}

impl TaskSpec {
    pub fn new(
        label: impl Into<String>,
        value_fn: ValueBackend,
        state_cost: StateCost,
        discount: f64,
        goal_points: Vec<DVector<f64>>,
    ) -> Result<Self, ValueError> {
        if !(discount >= 0.0) || !discount.is_finite() {
            return Err(ValueError::InvalidBackend(format!(
                "discount must be finite and nonnegative, got {discount}"
            )));
        }
        let n = value_fn.dim();
        if let Some(g) = goal_points.iter().find(|g| g.len() != n) {
            return Err(ValueError::Shape { expected: n, got: g.len() });
        }
        Ok(Self {
            label: label.into(),
            value_fn,
            state_cost,
            discount,
            goal_points,
        })
    }

    /// Move to `goal` under `q = κ‖x − goal‖`, with the exact undiscounted value function.
    pub fn analytic_goal(label: impl Into<String>, goal: DVector<f64>, cost_scale: f64) -> Result<Self, ValueError> {
        let backend = ValueBackend::analytic_goal(goal.clone(), cost_scale)?;
        let cost = StateCost::Distance {
            goals: vec![goal.clone()],
            scale: cost_scale,
        };
        Self::new(label, backend, cost, 0.0, vec![goal])
    }

    /// Move to the nearest of `goals` under `q = κ min_j ‖x − goal_j‖`.
    pub fn min_goal(label: impl Into<String>, goals: Vec<DVector<f64>>, cost_scale: f64) -> Result<Self, ValueError> {
        let backend = ValueBackend::min_goal(goals.clone(), cost_scale)?;
        let cost = StateCost::Distance {
            goals: goals.clone(),
            scale: cost_scale,
        };
        Self::new(label, backend, cost, 0.0, goals)
    }

    pub fn dim(&self) -> usize {
        self.value_fn.dim()
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, ValueError> {
        self.value_fn.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ValueError> {
        self.value_fn.gradient(x)
    }

    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.state_cost.eval(x)
    }

    /// Tolerance for `J̃(goal) ≈ 0`, or `None` where the check is not meaningful.
    pub fn default_value_tol(&self) -> Option<f64> {
        match &self.value_fn {
            ValueBackend::AnalyticGoal { .. } | ValueBackend::MinGoal { .. } => Some(ANALYTIC_VALUE_TOL),
            ValueBackend::Tabulated(_) => Some(10.0 * tabulated::DEFAULT_ORACLE_TOL),
            ValueBackend::NeuralMlp(_) => None,
        }
    }

    /// Checks `J̃(x_T) ≤ value_tol` at every declared goal point.
    pub fn validate_goals(&self, value_tol: f64) -> Result<(), ValueError> {
        for (index, goal) in self.goal_points.iter().enumerate() {
            let value = self.value(goal)?;
            if value > value_tol {
                return Err(ValueError::GoalNotMinimal {
                    label: self.label.clone(),
                    index,
                    value,
                    tol: value_tol,
                });
            }
        }
        Ok(())
    }
}

/// Lie derivatives of one task at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieRow {
    /// `J̃(x)`
    pub value: f64,
    /// `q(x)`
    pub cost: f64,
    /// `L_f J̃(x)`
    pub lf: f64,
    /// `L_g J̃(x)`, length `m`.
    pub lg: DVector<f64>,
}

impl LieRow {
    pub fn new(value: f64, cost: f64, lf: f64, lg: DVector<f64>) -> Self {
        Self { value, cost, lf, lg }
    }

    /// `‖L_g J̃‖²`
    pub fn lg_norm_sq(&self) -> f64 {
        self.lg.norm_squared()
    }
}

/// Stacked Lie derivatives of all tasks at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LieBundle {
    pub input_dim: usize,
    pub rows: Vec<LieRow>,
}

impl LieBundle {
    pub fn new(input_dim: usize, rows: Vec<LieRow>) -> Self {
        debug_assert!(rows.iter().all(|r| r.lg.len() == input_dim));
        Self { input_dim, rows }
    }

    /// Bundle built from raw `(lf, lg, value)` triples with zero state cost.
    pub fn from_parts(input_dim: usize, parts: &[(f64, Vec<f64>, f64)]) -> Self {
        let rows = parts
            .iter()
            .map(|(lf, lg, value)| LieRow::new(*value, 0.0, *lf, DVector::from_column_slice(lg)))
            .collect();
        Self::new(input_dim, rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same bundle with tasks reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self::new(self.input_dim, order.iter().map(|&i| self.rows[i].clone()).collect())
    }
}

/// `L_f J̃ᵢ = ∇J̃ᵢᵀ f(x)` and `L_g J̃ᵢ = ∇J̃ᵢᵀ g(x)` for every task.
pub fn lie_derivatives(tasks: &[TaskSpec], model: &SystemModel, x: &DVector<f64>) -> Result<LieBundle, ValueError> {
    let f = model.eval_f(x)?;
    let g = model.eval_g(x)?;
    let rows = tasks
        .iter()
        .map(|task| {
            let grad = task.gradient(x)?;
            if grad.len() != f.len() {
                return Err(ValueError::Shape {
                    expected: f.len(),
                    got: grad.len(),
                });
            }
            let lf = grad.dot(&f);
            let lg = g.tr_mul(&grad);
            Ok(LieRow::new(task.value(x)?, task.cost(x), lf, lg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LieBundle::new(model.input_dim(), rows))
}

/// `¼‖L_g J̃‖² − L_f J̃ − (q − β J̃)`; zero where the HJB equation holds.
pub fn hjb_residual(task: &TaskSpec, model: &SystemModel, x: &DVector<f64>) -> Result<f64, ValueError> {
    let bundle = lie_derivatives(std::slice::from_ref(task), model, x)?;
    let row = &bundle.rows[0];
    Ok(0.25 * row.lg_norm_sq() - row.lf - (row.cost - task.discount * row.value))
}
