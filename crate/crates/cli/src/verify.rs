use std::io::Write;

use mtclf_core::controller::{control, single_task_optimal_input, ControllerConfig, SigmaMode};
use mtclf_core::value_functions::{hjb_residual, lie_derivatives, ValueBackend};
use mtclf_core::TaskSpec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::say;
use crate::{CliError, Scenario};

const FD_STEP: f64 = 1e-6;
/// Samples this close to a tie of a min-goal backend are skipped.
const TIE_MARGIN: f64 = 1e-3;
/// Samples this close to a tabulation knot are skipped; the gradient jumps there.
const KNOT_MARGIN: f64 = 1e-5;
const DRAWS_PER_SAMPLE: usize = 100;

/// Outcome of one check on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub task: String,
    pub backend: &'static str,
    pub samples: usize,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckRow {
    pub fn name(&self) -> String {
        format!("{}[{}]", self.check, self.task)
    }
}

fn admissible(task: &TaskSpec, x: &DVector<f64>, min_goal_distance: f64) -> bool {
    if task.goal_points.iter().any(|g| (x - g).norm() < min_goal_distance) {
        return false;
    }
    if task.value_fn.is_nonsmooth_at(x, TIE_MARGIN) {
        return false;
    }
    if let ValueBackend::Tabulated(table) = &task.value_fn {
        let near_knot = table
            .knots()
            .iter()
            .zip(x.iter())
            .any(|(knots, &xi)| knots.iter().any(|k| (k - xi).abs() < KNOT_MARGIN));
        if near_knot {
            return false;
        }
    }
    true
}

fn draw_samples(s: &Scenario, task: &TaskSpec, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let v = &s.verify;
    let (lo, hi) = (s.region.lower(), s.region.upper());
    let mut out = Vec::with_capacity(v.samples);
    for _ in 0..v.samples * DRAWS_PER_SAMPLE {
        if out.len() == v.samples {
            break;
        }
        let x = DVector::from_fn(lo.len(), |i, _| {
            let (a, b) = (lo[i] + v.boundary_margin, hi[i] - v.boundary_margin);
            if a < b {
                rng.gen_range(a..b)
            } else {
                0.5 * (lo[i] + hi[i])
            }
        });
        if admissible(task, &x, v.min_goal_distance) {
            out.push(x);
        }
    }
    out
}

fn central_difference(task: &TaskSpec, x: &DVector<f64>) -> Result<DVector<f64>, CliError> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += FD_STEP;
        lo[i] -= FD_STEP;
        g[i] = (value(task, &hi)? - value(task, &lo)?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn value(task: &TaskSpec, x: &DVector<f64>) -> Result<f64, CliError> {
    task.value(x).map_err(|e| CliError::Config(format!("task {}: {e}", task.label)))
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 1e-12 {
        err / scale
    } else {
        err
    }
}

/// Single-task QP settings isolating task `index`.
fn recovery_config(s: &Scenario, index: usize, mode: SigmaMode) -> ControllerConfig {
    ControllerConfig {
        slack_weight: s.verify.slack_weight,
        priority_matrix: None,
        sigma_mode: mode,
        active_tasks: Some(vec![index]),
        box_region: None,
        input_limit: None,
        ..s.controller.clone()
    }
}

/// Runs every check on every task without judging the overall result.
pub fn run_checks(s: &Scenario) -> Result<Vec<CheckRow>, CliError> {
    let v = &s.verify;
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let mut rows = Vec::new();
    for (index, task) in s.tasks.iter().enumerate() {
        let samples = draw_samples(s, task, &mut rng);
        let analytic = task.value_fn.is_analytic();
        let backend = task.value_fn.kind();
        let row = |check, worst: f64, tol| CheckRow {
            check,
            task: task.label.clone(),
            backend,
            samples: samples.len(),
            worst,
            tol,
            passed: !samples.is_empty() && worst < tol,
        };
        let eval_err = |e: &dyn std::fmt::Display| CliError::Config(format!("task {}: {e}", task.label));

        let mut worst_fd: f64 = 0.0;
        for x in &samples {
            let g = task.gradient(x).map_err(|e| eval_err(&e))?;
            let fd = central_difference(task, x)?;
            worst_fd = worst_fd.max(relative((&g - fd).norm(), g.norm()));
        }
        rows.push(row("gradient_fd", worst_fd, v.fd_rel_tol));

        let mut modes = vec![("recovery_discounted", SigmaMode::Discounted)];
        if task.discount == 0.0 {
            modes.insert(0, ("recovery_undiscounted", SigmaMode::Undiscounted));
        }
        for (check, mode) in modes {
            let cfg = recovery_config(s, index, mode);
            let mut worst: f64 = 0.0;
            for x in &samples {
                let u = control(&s.tasks, &s.model, x, &cfg).map_err(|e| CliError::Qp {
                    step: 0,
                    reason: format!("recovery QP for task {}: {e}", task.label),
                })?;
                let target = single_task_optimal_input(task, &s.model, x).map_err(|e| eval_err(&e))?;
                let err = (&u - &target).norm();
                worst = worst.max(if analytic { err } else { relative(err, target.norm()) });
            }
            let tol = if analytic { v.analytic_recovery_tol } else { v.approx_recovery_tol };
            rows.push(row(check, worst, tol));
        }

        let mut worst_res: f64 = 0.0;
        for x in &samples {
            let res = hjb_residual(task, &s.model, x).map_err(|e| eval_err(&e))?.abs();
            if analytic {
                worst_res = worst_res.max(res);
            } else {
                let bundle = lie_derivatives(std::slice::from_ref(task), &s.model, x).map_err(|e| eval_err(&e))?;
                let r = &bundle.rows[0];
                let scale = 0.25 * r.lg_norm_sq() + r.lf.abs() + r.cost + task.discount * r.value;
                worst_res = worst_res.max(relative(res, scale));
            }
        }
        let tol = if analytic { v.analytic_residual_tol } else { v.approx_residual_rel_tol };
        rows.push(row("hjb_residual", worst_res, tol));
    }
    Ok(rows)
}

pub fn verify(s: &Scenario, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = run_checks(s)?;
    for r in &rows {
        say!(
            out,
            "check={} task={} backend={} samples={} worst={:.3e} tol={:.3e} result={}",
            r.check,
            r.task,
            r.backend,
            r.samples,
            r.worst,
            r.tol,
            if r.passed { "pass" } else { "fail" }
        )?;
    }
    let failing: Vec<String> = rows.iter().filter(|r| !r.passed).map(CheckRow::name).collect();
    if failing.is_empty() {
        say!(out, "verify=pass")
    } else {
        say!(out, "verify=fail failing={}", failing.join(","))?;
        Err(CliError::VerifyFailed(failing))
    }
}
