//! Pointwise relationships between tasks: independence, orthogonality,
//! concurrent controllability and concurrent executability.
//!
//! All four checks look only at a [`LieBundle`]; [`analyze_state`] evaluates
//! the bundle at a state and runs them together.

mod grid;
mod report;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::active_set::{self, ActiveSetOptions, QpProblem, QpStatus};
use crate::dynamics::{DynamicsError, SystemModel};
use crate::value_functions::{lie_derivatives, LieBundle, TaskSpec, ValueError};

pub use grid::{
    common_goal_scan, grid_analysis, near_goal_controllable_radius, GoalSetReport, GridAnalysis, PairAngles,
};
pub use report::{angle_color, write_angle_ppm, write_grid_csv, write_placeholder_ppm};

/// Largest task count for which subset pairs are enumerated.
pub const MAX_SUBSET_TASKS: usize = 16;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("subset enumeration supports at most {MAX_SUBSET_TASKS} tasks, got {0}")]
    TooManyTasks(usize),
    #[error("executability LP stopped with status {0:?}")]
    Solver(QpStatus),
    #[error("state {0} is not a common goal: {1}")]
    NotCommonGoal(String, String),
    #[error("grid analysis needs a two-dimensional state and at least 2 points per axis")]
    UnsupportedGrid,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerical thresholds shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `J̃ᵢ <= value_tol` counts as task `i` being finished.
    pub value_tol: f64,
    /// `‖L_g J̃ᵢ‖ <= grad_tol` counts as a zero row; also the relative rank threshold.
    pub grad_tol: f64,
    /// Relative bound on pairwise inner products for orthogonality.
    pub orth_tol: f64,
    /// Subset sums are antiparallel when `cos∠ < −1 + angle_tol`.
    pub angle_tol: f64,
    /// Executable when the LP optimum is below `−margin`.
    pub margin: f64,
    /// `‖u‖∞ <= input_bound` in the executability LP.
    pub input_bound: f64,
    /// `‖f(x)‖ <= eq_tol` counts as an equilibrium.
    pub eq_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value_tol: 1e-6,
            grad_tol: 1e-9,
            orth_tol: 1e-9,
            angle_tol: 1e-9,
            margin: 1e-9,
            input_bound: 1e3,
            eq_tol: 1e-9,
        }
    }
}

impl Tolerances {
    /// Defaults, with the looser antiparallel threshold when any backend is approximate.
    pub fn for_tasks(tasks: &[TaskSpec]) -> Self {
        let mut tol = Self::default();
        if tasks.iter().any(|t| !t.value_fn.is_analytic()) {
            tol.angle_tol = 1e-4;
        }
        tol
    }
}

fn nonzero_rows(bundle: &LieBundle, grad_tol: f64) -> Vec<&DVector<f64>> {
    bundle
        .rows
        .iter()
        .map(|r| &r.lg)
        .filter(|lg| lg.norm() > grad_tol)
        .collect()
}

/// Nonzero `L_g J̃ᵢ` rows are linearly independent.
pub fn check_independence(bundle: &LieBundle, grad_tol: f64) -> bool {
    let rows = nonzero_rows(bundle, grad_tol);
    if rows.is_empty() {
        return true;
    }
    if rows.len() > bundle.input_dim {
        return false;
    }
    let mat = DMatrix::from_fn(rows.len(), bundle.input_dim, |r, c| rows[r][c]);
    let sv = mat.svd(false, false).singular_values;
    sv.min() > grad_tol * sv.max()
}

/// `|⟨L_g J̃ᵢ, L_g J̃ⱼ⟩| <= tol ‖L_g J̃ᵢ‖ ‖L_g J̃ⱼ‖` for every pair.
pub fn check_orthogonality(bundle: &LieBundle, tol: f64) -> bool {
    let rows = &bundle.rows;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (&rows[i].lg, &rows[j].lg);
            if a.dot(b).abs() > tol * a.norm() * b.norm() {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutabilityDecision {
    pub executable: bool,
    /// `t* = min_u max_i (L_f J̃ᵢ + L_g J̃ᵢ u)` over the input box.
    pub optimum: f64,
    pub witness: Option<DVector<f64>>,
    /// Nonnegative weights on the task rows (bundle order, zero for finished
    /// tasks) with `Σ λᵢ = 1` and `Σ λᵢ L_g J̃ᵢ ≈ 0` when the input box is not binding.
    pub certificate: Option<DVector<f64>>,
    /// Tasks with `J̃ᵢ > value_tol`.
    pub considered: Vec<usize>,
}

/// Decides whether some input strictly decreases every unfinished task.
///
/// Solves `min t` subject to `L_f J̃ᵢ + L_g J̃ᵢ u <= t` and `‖u‖∞ <= M`.
pub fn check_concurrent_executability(
    bundle: &LieBundle,
    value_tol: f64,
    input_bound: f64,
    margin: f64,
) -> Result<ExecutabilityDecision, AnalysisError> {
    let m = bundle.input_dim;
    let considered: Vec<usize> = (0..bundle.len()).filter(|&i| bundle.rows[i].value > value_tol).collect();
    if considered.is_empty() {
        return Ok(ExecutabilityDecision {
            executable: true,
            optimum: f64::NEG_INFINITY,
            witness: Some(DVector::zeros(m)),
            certificate: None,
            considered,
        });
    }
    let k = considered.len();
    let mut rows = DMatrix::zeros(k + 2 * m, m + 1);
    let mut rhs = DVector::zeros(k + 2 * m);
    for (r, &i) in considered.iter().enumerate() {
        let row = &bundle.rows[i];
        for c in 0..m {
            rows[(r, c)] = row.lg[c];
        }
        rows[(r, m)] = -1.0;
        rhs[r] = -row.lf;
    }
    for c in 0..m {
        rows[(k + 2 * c, c)] = 1.0;
        rhs[k + 2 * c] = input_bound;
        rows[(k + 2 * c + 1, c)] = -1.0;
        rhs[k + 2 * c + 1] = input_bound;
    }
    let mut objective = DVector::zeros(m + 1);
    objective[m] = 1.0;
    let lp = QpProblem::new(DMatrix::zeros(m + 1, m + 1), objective, rows, rhs);

    let mut start = DVector::zeros(m + 1);
    start[m] = considered
        .iter()
        .map(|&i| bundle.rows[i].lf)
        .fold(f64::NEG_INFINITY, f64::max);
    let opts = ActiveSetOptions {
        tol: 1e-12,
        max_iters: 50 * (k + 2 * m + 1),
    };
    let out = active_set::solve(&lp, Some(&start), &[], &opts);
    if out.status != QpStatus::Optimal {
        return Err(AnalysisError::Solver(out.status));
    }
    let optimum = out.z[m];
    if optimum < -margin {
        Ok(ExecutabilityDecision {
            executable: true,
            optimum,
            witness: Some(out.z.rows(0, m).into_owned()),
            certificate: None,
            considered,
        })
    } else {
        let mut lambda = DVector::zeros(bundle.len());
        for (r, &i) in considered.iter().enumerate() {
            lambda[i] = out.multipliers[r];
        }
        Ok(ExecutabilityDecision {
            executable: false,
            optimum,
            witness: None,
            certificate: Some(lambda),
            considered,
        })
    }
}

/// Subsets `P`, `Q` whose Lie-derivative sums point in opposite directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetViolation {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    /// `k` in `Σ_P = −k Σ_Q`.
    pub ratio: f64,
    pub overlapping: bool,
}

fn subset_sums(bundle: &LieBundle) -> Result<Vec<DVector<f64>>, AnalysisError> {
    let n = bundle.len();
    if n > MAX_SUBSET_TASKS {
        return Err(AnalysisError::TooManyTasks(n));
    }
    let count = 1usize << n;
    let mut sums = vec![DVector::zeros(bundle.input_dim); count];
    for mask in 1..count {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = &sums[mask & (mask - 1)] + &bundle.rows[low].lg;
    }
    Ok(sums)
}

fn members(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|b| mask >> b & 1 == 1).collect()
}

fn scan_antiparallel(
    bundle: &LieBundle,
    angle_tol: f64,
    zero_tol: f64,
    first_only: bool,
) -> Result<Vec<SubsetViolation>, AnalysisError> {
    let sums = subset_sums(bundle)?;
    let norms: Vec<f64> = sums.iter().map(|s| s.norm()).collect();
    let mut found = Vec::new();
    for a in 1..sums.len() {
        if norms[a] <= zero_tol {
            continue;
        }
        for b in a + 1..sums.len() {
            if norms[b] <= zero_tol {
                continue;
            }
            let cos = sums[a].dot(&sums[b]) / (norms[a] * norms[b]);
            if cos < -1.0 + angle_tol {
                found.push(SubsetViolation {
                    p: members(a),
                    q: members(b),
                    ratio: norms[a] / norms[b],
                    overlapping: a & b != 0,
                });
                if first_only {
                    return Ok(found);
                }
            }
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityDecision {
    pub controllable: bool,
    pub violation: Option<SubsetViolation>,
}

/// No two nonzero subset sums of `L_g J̃ᵢ` rows are antiparallel.
///
/// Pairs of subsets may overlap; `P = Q` never qualifies since it would
/// need a zero sum.
pub fn check_concurrent_controllability(
    bundle: &LieBundle,
    angle_tol: f64,
    zero_tol: f64,
) -> Result<ControllabilityDecision, AnalysisError> {
    let violation = scan_antiparallel(bundle, angle_tol, zero_tol, true)?.pop();
    Ok(ControllabilityDecision {
        controllable: violation.is_none(),
        violation,
    })
}

/// Every antiparallel pair of subset sums (unordered).
pub fn antiparallel_subset_pairs(
    bundle: &LieBundle,
    angle_tol: f64,
    zero_tol: f64,
) -> Result<Vec<SubsetViolation>, AnalysisError> {
    scan_antiparallel(bundle, angle_tol, zero_tol, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutabilityReport {
    pub independent: bool,
    pub orthogonal: bool,
    pub concurrently_controllable: bool,
    pub concurrently_executable: bool,
    pub lp_optimum: f64,
    pub witness_input: Option<DVector<f64>>,
    pub infeasibility_certificate: Option<DVector<f64>>,
    pub violating_subsets: Option<SubsetViolation>,
    /// Tasks with `J̃ᵢ > value_tol` but `‖L_g J̃ᵢ‖ <= grad_tol`.
    pub premise_violations: Vec<usize>,
    /// Tasks evaluated on a known non-differentiable locus.
    pub nonsmooth_tasks: Vec<usize>,
}

/// Runs all four checks on one bundle.
pub fn analyze_bundle(bundle: &LieBundle, tol: &Tolerances) -> Result<ExecutabilityReport, AnalysisError> {
    let premise_violations = bundle
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.value > tol.value_tol && r.lg.norm() <= tol.grad_tol)
        .map(|(i, _)| i)
        .collect();
    let exec = check_concurrent_executability(bundle, tol.value_tol, tol.input_bound, tol.margin)?;
    let ctrl = check_concurrent_controllability(bundle, tol.angle_tol, tol.grad_tol)?;
    Ok(ExecutabilityReport {
        independent: check_independence(bundle, tol.grad_tol),
        orthogonal: check_orthogonality(bundle, tol.orth_tol),
        concurrently_controllable: ctrl.controllable,
        concurrently_executable: exec.executable,
        lp_optimum: exec.optimum,
        witness_input: exec.witness,
        infeasibility_certificate: exec.certificate,
        violating_subsets: ctrl.violation,
        premise_violations,
        nonsmooth_tasks: Vec::new(),
    })
}

pub fn analyze_state(
    tasks: &[TaskSpec],
    model: &SystemModel,
    x: &DVector<f64>,
    tol: &Tolerances,
) -> Result<ExecutabilityReport, AnalysisError> {
    let bundle = lie_derivatives(tasks, model, x)?;
    let mut report = analyze_bundle(&bundle, tol)?;
    report.nonsmooth_tasks = tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.value_fn.is_nonsmooth_at(x, tol.grad_tol))
        .map(|(i, _)| i)
        .collect();
    Ok(report)
}
