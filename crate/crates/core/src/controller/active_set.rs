//! Primal active-set method for small dense convex quadratic programs
//!
//! ```text
//!     minimize    ½ zᵀ H z + cᵀ z
//!     subject to  A z <= b
//! ```
//!
//! with `H` positive semidefinite. `H = 0` is allowed, which turns the
//! method into a vertex-walking LP solver. Constraint rows are scaled to unit
//! norm internally; reported multipliers refer to the rows as given.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constraints: DMatrix<f64>, bounds: DVector<f64>) -> Self {
        let n = linear.len();
        assert_eq!(hessian.shape(), (n, n), "hessian must be n x n");
        assert_eq!(constraints.ncols(), n, "constraint matrix must have n columns");
        assert_eq!(constraints.nrows(), bounds.len(), "one bound per constraint row");
        Self {
            hessian,
            linear,
            constraints,
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest violation `max_i (A z − b)_i`, or 0 without constraints.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        (&self.constraints * z - &self.bounds).iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIters,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub z: DVector<f64>,
    /// One multiplier per constraint row; zero off the working set.
    pub multipliers: DVector<f64>,
    /// Working-set row indices at termination.
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveSetOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 500,
        }
    }
}

struct Scaled {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    norms: Vec<f64>,
    /// Indices of rows that take part (zero rows are dropped after a sign check).
    live: Vec<bool>,
}

const ZERO_ROW: f64 = 1e-14;

fn scale_rows(problem: &QpProblem, tol: f64) -> Result<Scaled, ()> {
    let p = problem.num_constraints();
    let mut rows = problem.constraints.clone();
    let mut rhs = problem.bounds.clone();
    let mut norms = vec![1.0; p];
    let mut live = vec![true; p];
    for i in 0..p {
        let norm = problem.constraints.row(i).norm();
        if norm <= ZERO_ROW {
            if problem.bounds[i] < -tol {
                return Err(());
            }
            live[i] = false;
            continue;
        }
        norms[i] = norm;
        rows.row_mut(i).scale_mut(1.0 / norm);
        rhs[i] /= norm;
    }
    Ok(Scaled { rows, rhs, norms, live })
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix by cyclic Jacobi rotations.
///
/// `SymmetricEigen` in nalgebra 0.33 mispairs eigenvectors when off-diagonal
/// entries are near 1e-16, which happens whenever a Lie derivative component
/// rounds to almost zero.
fn jacobi_eigen(mut a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    let scale = a.norm();
    for _ in 0..64 {
        let off: f64 = (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).map(|(p, q)| a[(p, q)].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// Orthonormal basis of `{p : A_W p = 0}` from the eigenvectors of `A_Wᵀ A_W`.
fn null_space(rows: &DMatrix<f64>, working: &[usize], n: usize) -> DMatrix<f64> {
    if working.is_empty() {
        return DMatrix::identity(n, n);
    }
    let aw = DMatrix::from_fn(working.len(), n, |r, c| rows[(working[r], c)]);
    let (values, vectors) = jacobi_eigen(aw.tr_mul(&aw));
    let cols: Vec<usize> = (0..n).filter(|&j| values[j] < 1e-10).collect();
    DMatrix::from_fn(n, cols.len(), |r, c| vectors[(r, cols[c])])
}

fn is_independent(rows: &DMatrix<f64>, working: &[usize], candidate: usize) -> bool {
    let n = rows.ncols();
    if working.len() >= n {
        return false;
    }
    let z = null_space(rows, working, n);
    let a = rows.row(candidate).transpose();
    (z.tr_mul(&a)).norm() > 1e-8
}

/// Least-squares multipliers for `A_Wᵀ λ = −g`.
fn working_multipliers(rows: &DMatrix<f64>, working: &[usize], grad: &DVector<f64>) -> DVector<f64> {
    let n = rows.ncols();
    let aw = DMatrix::from_fn(working.len(), n, |r, c| rows[(working[r], c)]);
    let gram = &aw * aw.transpose();
    let rhs = -(&aw * grad);
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .pseudo_inverse(1e-12)
            .map(|pinv| pinv * rhs)
            .unwrap_or_else(|_| DVector::zeros(working.len())),
    }
}

struct CoreOutcome {
    z: DVector<f64>,
    working: Vec<usize>,
    lambda_w: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

fn core(
    hessian: &DMatrix<f64>,
    linear: &DVector<f64>,
    scaled: &Scaled,
    mut z: DVector<f64>,
    hint: &[usize],
    opts: &ActiveSetOptions,
) -> CoreOutcome {
    let n = z.len();
    let p = scaled.rhs.len();
    let tol = opts.tol;
    let mut working: Vec<usize> = Vec::new();
    for &i in hint {
        if i < p
            && scaled.live[i]
            && !working.contains(&i)
            && (scaled.rows.row(i).dot(&z.transpose()) - scaled.rhs[i]).abs() <= tol
            && is_independent(&scaled.rows, &working, i)
        {
            working.push(i);
        }
    }

    let mut degenerate = false;
    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iters {
            let lambda_w = DVector::zeros(working.len());
            return CoreOutcome {
                z,
                working,
                lambda_w,
                status: QpStatus::MaxIters,
                iterations,
            };
        }
        iterations += 1;

        let grad = hessian * &z + linear;
        let gscale = 1.0f64.max(grad.amax());
        let basis = null_space(&scaled.rows, &working, n);
        let (step, alpha_max) = if working.len() >= n {
            (DVector::zeros(n), 1.0)
        } else {
            let reduced_h = basis.tr_mul(hessian) * &basis;
            let reduced_g = basis.tr_mul(&grad);
            let (values, vectors) = jacobi_eigen(reduced_h);
            let hscale = 1.0f64.max(values.amax());
            let flat = 1e-12 * hscale;
            let mut flat_part = DVector::zeros(basis.ncols());
            let mut newton = DVector::zeros(basis.ncols());
            for j in 0..basis.ncols() {
                let v = vectors.column(j);
                let coeff = v.dot(&reduced_g);
                if values[j] <= flat {
                    flat_part += v * coeff;
                } else {
                    newton -= v * (coeff / values[j]);
                }
            }
            if flat_part.norm() > tol * gscale {
                (-(&basis * flat_part), f64::INFINITY)
            } else {
                (&basis * newton, 1.0)
            }
        };

        if step.norm() <= 1e-12 * (1.0 + z.norm()) {
            if working.is_empty() {
                return CoreOutcome {
                    z,
                    working,
                    lambda_w: DVector::zeros(0),
                    status: QpStatus::Optimal,
                    iterations,
                };
            }
            let lambda_w = working_multipliers(&scaled.rows, &working, &grad);
            let threshold = -tol * gscale;
            let leave = if degenerate {
                // Bland's rule after a zero-length step keeps degenerate vertices from cycling.
                working
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| lambda_w[*k] < threshold)
                    .min_by_key(|(_, &row)| row)
                    .map(|(k, _)| k)
            } else {
                (0..working.len())
                    .filter(|&k| lambda_w[k] < threshold)
                    .min_by(|&a, &b| lambda_w[a].total_cmp(&lambda_w[b]))
            };
            match leave {
                None => {
                    return CoreOutcome {
                        z,
                        working,
                        lambda_w,
                        status: QpStatus::Optimal,
                        iterations,
                    }
                }
                Some(k) => {
                    working.remove(k);
                    continue;
                }
            }
        }

        let mut alpha = alpha_max;
        let mut blocking = None;
        let pnorm = step.norm();
        for i in 0..p {
            if !scaled.live[i] || working.contains(&i) {
                continue;
            }
            // Rows spanned by the working set stay constant along the step.
            if basis.tr_mul(&scaled.rows.row(i).transpose()).norm() <= 1e-8 {
                continue;
            }
            let ap = scaled.rows.row(i).dot(&step.transpose());
            if ap <= 1e-14 * pnorm {
                continue;
            }
            let slack = (scaled.rhs[i] - scaled.rows.row(i).dot(&z.transpose())).max(0.0);
            let ratio = slack / ap;
            if ratio < alpha || (ratio == alpha && blocking.is_some_and(|b| i < b)) {
                alpha = ratio;
                blocking = Some(i);
            }
        }
        if alpha.is_infinite() {
            return CoreOutcome {
                z,
                working,
                lambda_w: DVector::zeros(0),
                status: QpStatus::Unbounded,
                iterations,
            };
        }
        degenerate = alpha * pnorm <= 1e-14 * (1.0 + z.norm());
        z += step * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
}

/// Solves the QP from an optional starting point and working-set hint.
///
/// An infeasible or missing start goes through a phase-one LP that minimizes
/// the largest constraint violation.
pub fn solve(problem: &QpProblem, start: Option<&DVector<f64>>, hint: &[usize], opts: &ActiveSetOptions) -> QpResult {
    let n = problem.dim();
    let p = problem.num_constraints();
    let fail = |status, z: DVector<f64>, iterations| QpResult {
        objective: problem.objective(&z),
        z,
        multipliers: DVector::zeros(p),
        active: Vec::new(),
        status,
        iterations,
    };
    let Ok(scaled) = scale_rows(problem, opts.tol) else {
        return fail(QpStatus::Infeasible, DVector::zeros(n), 0);
    };
    let z0 = start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let violation = (0..p)
        .filter(|&i| scaled.live[i])
        .map(|i| scaled.rows.row(i).dot(&z0.transpose()) - scaled.rhs[i])
        .fold(0.0f64, f64::max);

    let mut phase_one_iters = 0;
    let feasible = if violation > opts.tol {
        // Variables (z, s): minimize s subject to Â z − s <= b̂ and s >= 0.
        let live: Vec<usize> = (0..p).filter(|&i| scaled.live[i]).collect();
        let mut rows = DMatrix::zeros(live.len() + 1, n + 1);
        let mut rhs = DVector::zeros(live.len() + 1);
        for (r, &i) in live.iter().enumerate() {
            for c in 0..n {
                rows[(r, c)] = scaled.rows[(i, c)];
            }
            rows[(r, n)] = -1.0;
            rhs[r] = scaled.rhs[i];
        }
        rows[(live.len(), n)] = -1.0;
        let aux = QpProblem::new(
            DMatrix::zeros(n + 1, n + 1),
            {
                let mut c = DVector::zeros(n + 1);
                c[n] = 1.0;
                c
            },
            rows,
            rhs,
        );
        let Ok(aux_scaled) = scale_rows(&aux, opts.tol) else {
            return fail(QpStatus::Infeasible, z0, 0);
        };
        let mut y0 = DVector::zeros(n + 1);
        y0.rows_mut(0, n).copy_from(&z0);
        y0[n] = violation;
        let out = core(&aux.hessian, &aux.linear, &aux_scaled, y0, &[], opts);
        phase_one_iters = out.iterations;
        match out.status {
            QpStatus::Optimal if out.z[n] <= opts.tol => out.z.rows(0, n).into_owned(),
            QpStatus::Optimal => return fail(QpStatus::Infeasible, out.z.rows(0, n).into_owned(), out.iterations),
            status => return fail(status, out.z.rows(0, n).into_owned(), out.iterations),
        }
    } else {
        z0
    };

    let mut phase_two_opts = *opts;
    phase_two_opts.max_iters = opts.max_iters.saturating_sub(phase_one_iters).max(1);
    let out = core(&problem.hessian, &problem.linear, &scaled, feasible, hint, &phase_two_opts);
    let mut multipliers = DVector::zeros(p);
    if out.status == QpStatus::Optimal {
        for (k, &i) in out.working.iter().enumerate() {
            multipliers[i] = out.lambda_w[k].max(0.0) / scaled.norms[i];
        }
    }
    QpResult {
        objective: problem.objective(&out.z),
        z: out.z,
        multipliers,
        active: out.working,
        status: out.status,
        iterations: out.iterations + phase_one_iters,
    }
}
