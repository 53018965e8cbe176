use nalgebra::DVector;
use rayon::prelude::*;

use super::{analyze_bundle, check_concurrent_controllability, AnalysisError, ExecutabilityReport, Tolerances};
use crate::dynamics::{BoxRegion, SystemModel};
use crate::value_functions::{lie_derivatives, TaskSpec};

/// Angle between `L_g J̃ᵢ` and `L_g J̃ⱼ` at every grid cell, in radians.
///
/// `NaN` where either row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAngles {
    pub i: usize,
    pub j: usize,
    pub values: Vec<f64>,
}

/// Reports on a regular 2-D grid. Cell `(ix, iy)` is stored at `ix * ys.len() + iy`.
#[derive(Debug, Clone)]
pub struct GridAnalysis {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub reports: Vec<ExecutabilityReport>,
    pub angles: Vec<PairAngles>,
}

impl GridAnalysis {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ys.len() + iy
    }

    pub fn point(&self, index: usize) -> (f64, f64) {
        let ny = self.ys.len();
        (self.xs[index / ny], self.ys[index % ny])
    }

    pub fn executable_fraction(&self) -> f64 {
        let hits = self.reports.iter().filter(|r| r.concurrently_executable).count();
        hits as f64 / self.reports.len() as f64
    }

    /// 8-connected components of the non-executable cells, largest first.
    pub fn non_executable_components(&self) -> Vec<Vec<usize>> {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let mut seen = vec![false; self.reports.len()];
        let mut components = Vec::new();
        for start in 0..self.reports.len() {
            if seen[start] || self.reports[start].concurrently_executable {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(c) = stack.pop() {
                comp.push(c);
                let (ix, iy) = ((c / ny) as isize, (c % ny) as isize);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        let (jx, jy) = (ix + dx, iy + dy);
                        if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                            continue;
                        }
                        let k = self.index(jx as usize, jy as usize);
                        if !seen[k] && !self.reports[k].concurrently_executable {
                            seen[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components.sort_by_key(|c| std::cmp::Reverse(c.len()));
        components
    }
}

fn angle(a: &DVector<f64>, b: &DVector<f64>, zero_tol: f64) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na <= zero_tol || nb <= zero_tol {
        return f64::NAN;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Runs [`analyze_state`](super::analyze_state) on a `resolution x resolution` grid over a 2-D box.
pub fn grid_analysis(
    tasks: &[TaskSpec],
    model: &SystemModel,
    region: &BoxRegion,
    resolution: usize,
    tol: &Tolerances,
) -> Result<GridAnalysis, AnalysisError> {
    if region.dim() != 2 || model.state_dim() != 2 || resolution < 2 {
        return Err(AnalysisError::UnsupportedGrid);
    }
    let xs = region.axis_points(0, resolution);
    let ys = region.axis_points(1, resolution);
    let cells: Vec<(ExecutabilityReport, Vec<f64>)> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let x = DVector::from_vec(vec![xs[k / resolution], ys[k % resolution]]);
            let bundle = lie_derivatives(tasks, model, &x)?;
            let mut report = analyze_bundle(&bundle, tol)?;
            report.nonsmooth_tasks = tasks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.value_fn.is_nonsmooth_at(&x, tol.grad_tol))
                .map(|(i, _)| i)
                .collect();
            let mut pair_angles = Vec::new();
            for i in 0..bundle.len() {
                for j in i + 1..bundle.len() {
                    pair_angles.push(angle(&bundle.rows[i].lg, &bundle.rows[j].lg, tol.grad_tol));
                }
            }
            Ok((report, pair_angles))
        })
        .collect::<Result<_, AnalysisError>>()?;

    let mut angles = Vec::new();
    for i in 0..tasks.len() {
        for j in i + 1..tasks.len() {
            angles.push(PairAngles {
                i,
                j,
                values: Vec::with_capacity(cells.len()),
            });
        }
    }
    let mut reports = Vec::with_capacity(cells.len());
    for (report, pair_angles) in cells {
        for (slot, a) in angles.iter_mut().zip(pair_angles) {
            slot.values.push(a);
        }
        reports.push(report);
    }
    Ok(GridAnalysis { xs, ys, reports, angles })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSetReport {
    /// States where every task is finished and the drift vanishes.
    pub points: Vec<DVector<f64>>,
    pub empty: bool,
}

fn is_common_goal(tasks: &[TaskSpec], model: &SystemModel, x: &DVector<f64>, tol: &Tolerances) -> Result<bool, AnalysisError> {
    for task in tasks {
        if task.value(x)? > tol.value_tol {
            return Ok(false);
        }
    }
    Ok(model.eval_f(x)?.norm() <= tol.eq_tol)
}

/// Grid nodes and declared goal points that finish every task at an equilibrium.
pub fn common_goal_scan(
    tasks: &[TaskSpec],
    model: &SystemModel,
    region: &BoxRegion,
    resolution: usize,
    tol: &Tolerances,
) -> Result<GoalSetReport, AnalysisError> {
    let n = region.dim();
    let axes: Vec<Vec<f64>> = (0..n).map(|a| region.axis_points(a, resolution)).collect();
    let total = resolution.pow(n as u32);
    let mut points = Vec::new();
    for k in 0..total {
        let mut rem = k;
        let mut x = DVector::zeros(n);
        for a in (0..n).rev() {
            x[a] = axes[a][rem % resolution];
            rem /= resolution;
        }
        if is_common_goal(tasks, model, &x, tol)? {
            points.push(x);
        }
    }
    for task in tasks {
        for g in &task.goal_points {
            if g.len() == n
                && !points.iter().any(|p| (p - g).norm() <= 1e-12)
                && is_common_goal(tasks, model, g, tol)?
            {
                points.push(g.clone());
            }
        }
    }
    Ok(GoalSetReport {
        empty: points.is_empty(),
        points,
    })
}

fn sample_directions(n: usize) -> Vec<DVector<f64>> {
    if n == 2 {
        return (0..64)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / 64.0;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect();
    }
    // Every nonzero vector in {-1, 0, 1}^n.
    let mut dirs = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let v = DVector::from_fn(n, |_, _| {
            let d = (c % 3) as f64 - 1.0;
            c /= 3;
            d
        });
        if v.norm() > 0.0 {
            dirs.push(v.normalize());
        }
    }
    dirs
}

/// Largest sampled radius around a common goal on which every state is concurrently controllable.
///
/// Balls are probed on 8 rings with a fixed direction set; the radius is bisected `steps` times.
pub fn near_goal_controllable_radius(
    tasks: &[TaskSpec],
    model: &SystemModel,
    goal: &DVector<f64>,
    max_radius: f64,
    steps: usize,
    tol: &Tolerances,
) -> Result<f64, AnalysisError> {
    if !is_common_goal(tasks, model, goal, tol)? {
        let values: Vec<String> = tasks
            .iter()
            .map(|t| t.value(goal).map(|v| format!("{v:.3e}")))
            .collect::<Result<_, _>>()?;
        return Err(AnalysisError::NotCommonGoal(
            format!("{:?}", goal.as_slice()),
            format!("task values [{}], drift {:.3e}", values.join(", "), model.eval_f(goal)?.norm()),
        ));
    }
    let dirs = sample_directions(goal.len());
    let ball_ok = |r: f64| -> Result<bool, AnalysisError> {
        for ring in 1..=8 {
            let rho = r * ring as f64 / 8.0;
            for d in &dirs {
                let x = goal + d * rho;
                let bundle = lie_derivatives(tasks, model, &x)?;
                if !check_concurrent_controllability(&bundle, tol.angle_tol, tol.grad_tol)?.controllable {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    if ball_ok(max_radius)? {
        return Ok(max_radius);
    }
    let (mut lo, mut hi) = (0.0, max_radius);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if ball_ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
