//! Grid value iteration for the infinite-horizon problem with running cost
//! `q(x) + ‖u‖²` and discount rate `β`, on a 2-D box.
//!
//! Each sweep applies the semi-Lagrangian backup
//! `J(x) ← min_u τ·(q(x̂) + ‖u‖²) + e^{−β τ} J(clamp(x + τ·(f(x) + g(x)u)))`
//! to every node against the previous sweep (Jacobi), with bilinear
//! interpolation between nodes. The step `τ` and the cost sample `x̂` depend
//! on [`BackupStep`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{BoxRegion, DynamicsError, SystemModel};
use crate::value_functions::{StateCost, TabulatedValue, ValueError};

/// Initial value away from zero-cost nodes; also an upper cap on every backup.
pub const INITIAL_VALUE: f64 = 1e6;

/// Magnitudes of the coarse polar input set.
pub const COARSE_MAGNITUDES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Targets closer than this share one interpolation.
const SAME_TARGET: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("value iteration did not converge in {sweeps} sweeps (last residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("{nodes} nodes never dropped below the initial value; no zero-cost state is reachable from them")]
    Unreached { nodes: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Value(#[from] ValueError),
}

/// How far one backup moves along the candidate velocity `v = f(x) + g(x)u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupStep {
    /// `τ = dt` for every candidate, with the cost sampled at `x`.
    FixedTime,
    /// `τ = h/‖v‖` with `h` the smaller grid spacing, so every backup travels one
    /// cell, and the cost sampled at the step midpoint. Candidates with `v = 0`
    /// use `τ = dt`.
    #[default]
    GridLength,
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub region: BoxRegion,
    pub nodes_per_axis: [usize; 2],
    pub dt: f64,
    pub discount: f64,
    pub input_candidates: Vec<DVector<f64>>,
    pub step: BackupStep,
    pub conv_tol: f64,
    pub max_sweeps: usize,
}

impl GridSpec {
    /// Square grid with grid-length steps over [`fine_polar_inputs`], `dt = 0.05` and `conv_tol = 1e-6`.
    pub fn square(region: BoxRegion, nodes: usize, discount: f64) -> Self {
        Self {
            region,
            nodes_per_axis: [nodes, nodes],
            dt: 0.05,
            discount,
            input_candidates: fine_polar_inputs(),
            step: BackupStep::GridLength,
            conv_tol: 1e-6,
            max_sweeps: 20_000,
        }
    }

    /// Fixed `dt = 0.05` steps over [`coarse_polar_inputs`].
    pub fn square_fixed_time(region: BoxRegion, nodes: usize, discount: f64) -> Self {
        Self {
            input_candidates: coarse_polar_inputs(),
            step: BackupStep::FixedTime,
            ..Self::square(region, nodes, discount)
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<(), HjbError> {
        let bad = |msg: &str| Err(HjbError::InvalidSpec(msg.into()));
        if self.region.dim() != 2 {
            return bad("the grid oracle is two-dimensional");
        }
        if self.nodes_per_axis.iter().any(|&n| n < 2) {
            return bad("need at least 2 nodes per axis");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.conv_tol > 0.0) {
            return bad("conv_tol must be positive");
        }
        if !(self.discount >= 0.0 && self.discount.is_finite()) {
            return bad("discount must be a finite nonnegative rate");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive");
        }
        if self.input_candidates.is_empty() {
            return bad("input candidate set is empty");
        }
        if self.input_candidates.iter().any(|u| u.len() != input_dim) {
            return bad("input candidates do not match the model's input dimension");
        }
        if !self.input_candidates.iter().any(|u| u.iter().all(|&v| v == 0.0)) {
            return bad("input candidates must contain the zero input");
        }
        Ok(())
    }

    pub fn knots(&self) -> [Vec<f64>; 2] {
        [
            self.region.axis_points(0, self.nodes_per_axis[0]),
            self.region.axis_points(1, self.nodes_per_axis[1]),
        ]
    }
}

/// The zero input plus `directions` evenly spaced headings times each magnitude.
///
/// Candidates sharing a heading are adjacent, which lets grid-length backups reuse one interpolation.
pub fn polar_inputs(directions: usize, magnitudes: &[f64]) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(2)];
    for k in 0..directions {
        let th = std::f64::consts::TAU * k as f64 / directions as f64;
        for &mag in magnitudes {
            out.push(DVector::from_vec(vec![mag * th.cos(), mag * th.sin()]));
        }
    }
    out
}

/// 32 directions times [`COARSE_MAGNITUDES`], plus the zero input.
pub fn coarse_polar_inputs() -> Vec<DVector<f64>> {
    polar_inputs(32, &COARSE_MAGNITUDES)
}

/// 32 directions times `0.125·√2^k` for `k = 0..=12` (0.125 to 8), plus the zero input.
pub fn fine_polar_inputs() -> Vec<DVector<f64>> {
    let magnitudes: Vec<f64> = (0..=12).map(|k| 0.125 * 2f64.powf(k as f64 / 2.0)).collect();
    polar_inputs(32, &magnitudes)
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub table: TabulatedValue,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

impl ValueIterationResult {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }
}

/// Bilinear lookup on a uniform grid; queries are clamped into the box.
struct UniformGrid {
    lo: [f64; 2],
    hi: [f64; 2],
    inv_h: [f64; 2],
    n: [usize; 2],
}

impl UniformGrid {
    fn interpolate(&self, values: &[f64], p: [f64; 2]) -> f64 {
        let mut cell = [0usize; 2];
        let mut t = [0.0; 2];
        for a in 0..2 {
            let s = (p[a].clamp(self.lo[a], self.hi[a]) - self.lo[a]) * self.inv_h[a];
            let i = (s.floor() as usize).min(self.n[a] - 2);
            cell[a] = i;
            t[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let ny = self.n[1];
        let base = cell[0] * ny + cell[1];
        let (v00, v01, v10, v11) = (values[base], values[base + 1], values[base + ny], values[base + ny + 1]);
        let low = v00 + t[1] * (v01 - v00);
        let high = v10 + t[1] * (v11 - v10);
        low + t[0] * (high - low)
    }
}

/// Per-node data that stays fixed across sweeps.
struct Node {
    p: [f64; 2],
    q: f64,
    f: [f64; 2],
    /// Rows of `g(x)`.
    g: [Vec<f64>; 2],
}

/// One candidate's move from a node.
#[derive(Clone, Copy)]
struct Step {
    tau: f64,
    /// `τ·(f + g u)`.
    offset: [f64; 2],
    /// Sample the running cost at the step midpoint rather than the node.
    midpoint: bool,
    decay: f64,
    input_cost: f64,
    /// Same offset as the previous candidate.
    repeat: bool,
}

struct Backups<'a> {
    spec: &'a GridSpec,
    cost: &'a StateCost,
    grid: UniformGrid,
    nodes: Vec<Node>,
    /// Distance travelled by a grid-length backup.
    cell: f64,
    /// Candidate steps when `f` and `g` are the same at every node.
    uniform: Option<Vec<Step>>,
}

impl Backups<'_> {
    fn steps(&self, f: &[f64; 2], g: &[Vec<f64>; 2], out: &mut Vec<Step>) {
        out.clear();
        let dt = self.spec.dt;
        for u in &self.spec.input_candidates {
            let v = [
                f[0] + g[0].iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>(),
                f[1] + g[1].iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>(),
            ];
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let (tau, midpoint) = match self.spec.step {
                BackupStep::GridLength if speed > 0.0 => (self.cell / speed, true),
                _ => (dt, false),
            };
            let offset = [tau * v[0], tau * v[1]];
            let repeat = out.last().is_some_and(|s: &Step| {
                (s.offset[0] - offset[0]).abs() <= SAME_TARGET && (s.offset[1] - offset[1]).abs() <= SAME_TARGET
            });
            out.push(Step {
                tau,
                offset,
                midpoint,
                decay: (-self.spec.discount * tau).exp(),
                input_cost: u.norm_squared(),
                repeat,
            });
        }
    }

    fn backup(&self, node: &Node, values: &[f64], steps: &[Step], point: &mut DVector<f64>) -> f64 {
        let mut best = INITIAL_VALUE;
        let (mut cost_sample, mut value) = (node.q, 0.0);
        for step in steps {
            if !step.repeat {
                let target = [node.p[0] + step.offset[0], node.p[1] + step.offset[1]];
                cost_sample = if step.midpoint {
                    point[0] = node.p[0] + 0.5 * step.offset[0];
                    point[1] = node.p[1] + 0.5 * step.offset[1];
                    self.cost.eval(point)
                } else {
                    node.q
                };
                value = self.grid.interpolate(values, target);
            }
            let candidate = step.tau * (cost_sample + step.input_cost) + step.decay * value;
            if candidate < best {
                best = candidate;
            }
        }
        best
    }

    fn sweep(&self, values: &[f64], next: &mut [f64]) {
        let scratch = || (DVector::zeros(2), Vec::with_capacity(self.spec.input_candidates.len()));
        next.par_iter_mut()
            .zip(self.nodes.par_iter())
            .for_each_init(scratch, |(point, own), (out, node)| {
                let steps = match &self.uniform {
                    Some(shared) => shared.as_slice(),
                    None => {
                        self.steps(&node.f, &node.g, own);
                        own.as_slice()
                    }
                };
                *out = self.backup(node, values, steps, point);
            });
    }
}

/// Runs sweeps until the sup-norm change drops below `conv_tol`.
pub fn value_iteration(cost: &StateCost, model: &SystemModel, spec: &GridSpec) -> Result<ValueIterationResult, HjbError> {
    value_iteration_observed(cost, model, spec, |_, _| {})
}

/// As [`value_iteration`], calling `observe(sweep, values)` after every sweep.
pub fn value_iteration_observed(
    cost: &StateCost,
    model: &SystemModel,
    spec: &GridSpec,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<ValueIterationResult, HjbError> {
    if model.state_dim() != 2 {
        return Err(HjbError::InvalidSpec("the grid oracle is two-dimensional".into()));
    }
    spec.validate(model.input_dim())?;
    let [xs, ys] = spec.knots();
    let (nx, ny) = (xs.len(), ys.len());
    let h = [
        (xs[nx - 1] - xs[0]) / (nx - 1) as f64,
        (ys[ny - 1] - ys[0]) / (ny - 1) as f64,
    ];
    let grid = UniformGrid {
        lo: [xs[0], ys[0]],
        hi: [xs[nx - 1], ys[ny - 1]],
        inv_h: [1.0 / h[0], 1.0 / h[1]],
        n: [nx, ny],
    };

    let nodes: Vec<Node> = (0..nx * ny)
        .map(|k| {
            let x = DVector::from_vec(vec![xs[k / ny], ys[k % ny]]);
            let f = model.eval_f(&x)?;
            let g: DMatrix<f64> = model.eval_g(&x)?;
            Ok(Node {
                p: [x[0], x[1]],
                q: cost.eval(&x),
                f: [f[0], f[1]],
                g: [g.row(0).iter().copied().collect(), g.row(1).iter().copied().collect()],
            })
        })
        .collect::<Result<_, HjbError>>()?;
    if let Some(bad) = nodes.iter().find(|n| !(n.q >= 0.0 && n.q.is_finite())) {
        return Err(HjbError::InvalidSpec(format!(
            "state cost must be finite and nonnegative, got {} at ({}, {})",
            bad.q, bad.p[0], bad.p[1]
        )));
    }

    let mut backups = Backups {
        spec,
        cost,
        grid,
        cell: h[0].min(h[1]),
        nodes,
        uniform: None,
    };
    let first = &backups.nodes[0];
    if backups.nodes.iter().all(|n| n.f == first.f && n.g == first.g) {
        let mut shared = Vec::new();
        backups.steps(&first.f, &first.g, &mut shared);
        backups.uniform = Some(shared);
    }
    let mut values: Vec<f64> = backups
        .nodes
        .iter()
        .map(|n| if n.q == 0.0 { 0.0 } else { INITIAL_VALUE })
        .collect();
    let mut next = values.clone();
    let mut residuals = Vec::new();
    for sweep in 0..spec.max_sweeps {
        backups.sweep(&values, &mut next);
        let residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        residuals.push(residual);
        observe(sweep, &values);
        if residual < spec.conv_tol {
            let unreached = values.iter().filter(|&&v| v >= INITIAL_VALUE).count();
            if unreached > 0 {
                return Err(HjbError::Unreached { nodes: unreached });
            }
            let table = TabulatedValue::new(vec![xs, ys], values)?;
            return Ok(ValueIterationResult { table, residuals });
        }
    }
    Err(HjbError::NotConverged {
        sweeps: spec.max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

pub fn export_grid(table: &TabulatedValue, path: impl AsRef<Path>) -> Result<(), ValueError> {
    table.write(path)
}

/// Largest `|J_grid − J_exact| / J_exact` over nodes at least `band` cells from the boundary.
///
/// Nodes with `J_exact = 0` are skipped. Returns the error and the node where it occurs.
pub fn interior_relative_error(
    table: &TabulatedValue,
    band: usize,
    exact: impl Fn(&DVector<f64>) -> f64,
) -> (f64, Option<DVector<f64>>) {
    let knots = table.knots();
    let (nx, ny) = (knots[0].len(), knots[1].len());
    let mut worst = (0.0, None);
    for i in band..nx.saturating_sub(band) {
        for j in band..ny.saturating_sub(band) {
            let x = DVector::from_vec(vec![knots[0][i], knots[1][j]]);
            let reference = exact(&x);
            if reference <= 0.0 {
                continue;
            }
            let err = (table.node_value(&[i, j]) - reference).abs() / reference;
            if err > worst.0 {
                worst = (err, Some(x));
            }
        }
    }
    worst
}
