//! Reference oracles shared by the integration tests. None of them call the
//! solvers under test.
#![allow(dead_code)]

use mtclf_core::controller::QpProblem;
use mtclf_core::{LieBundle, LieRow};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Accelerated projected gradient ascent on the dual of
/// `min ½zᵀHz + cᵀz s.t. Az <= b` with `H` positive definite.
///
/// Returns the primal point `z(λ)` and the dual value, a lower bound on the optimum.
pub fn dual_projected_gradient(p: &QpProblem, max_iters: usize, tol: f64) -> (DVector<f64>, f64) {
    let chol = p.hessian.clone().cholesky().expect("reference needs a positive definite Hessian");
    let h_inv = chol.inverse();
    let a = &p.constraints;
    let m = a.nrows();
    let primal = |lam: &DVector<f64>| -(&h_inv * (&p.linear + a.tr_mul(lam)));
    let dual_value = |lam: &DVector<f64>| {
        let w = &p.linear + a.tr_mul(lam);
        -0.5 * w.dot(&(&h_inv * &w)) - p.bounds.dot(lam)
    };
    if m == 0 {
        let z = primal(&DVector::zeros(0));
        let v = p.objective(&z);
        return (z, v);
    }
    let gram = a * &h_inv * a.transpose();
    let lipschitz = gram.symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lipschitz;

    let mut lam = DVector::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for it in 0..max_iters {
        let grad = a * primal(&y) - &p.bounds;
        let next = (&y + &grad * step).map(|v| v.max(0.0));
        // Gradient-based restart keeps the iteration monotone enough.
        if (&next - &lam).dot(&(&next - &y)) < 0.0 {
            y = lam.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        lam = next;
        t = t_next;
        if it % 20 == 0 {
            let z = primal(&lam);
            let d = dual_value(&lam);
            let scale = 1.0 + d.abs();
            if p.max_violation(&z) <= tol * scale && (p.objective(&z) - d).abs() <= tol * scale {
                break;
            }
        }
    }
    (primal(&lam), dual_value(&lam))
}

/// `max_i (lf_i + lg_i · u)` over unfinished tasks.
pub fn worst_rate(bundle: &LieBundle, considered: &[usize], u: &DVector<f64>) -> f64 {
    considered
        .iter()
        .map(|&i| bundle.rows[i].lf + bundle.rows[i].lg.dot(u))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Evenly spread unit vectors: a circle in 2-D, a Fibonacci sphere in 3-D.
pub fn sample_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    match dim {
        2 => (0..count)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / count as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let y = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).sqrt();
                    let th = golden * k as f64;
                    DVector::from_vec(vec![r * th.cos(), y, r * th.sin()])
                })
                .collect()
        }
        _ => panic!("sampler covers two and three input dimensions"),
    }
}

/// Smallest sampled worst rate over `directions × magnitudes` inputs plus `u = 0`.
///
/// Each direction is scaled to `‖u‖∞` shells of `bound`, `bound/2`, ..., matching the
/// executability LP's input box and probing small feasible regions near the origin.
pub fn sampled_min_rate(bundle: &LieBundle, considered: &[usize], directions: &[DVector<f64>], magnitudes: usize, bound: f64) -> f64 {
    let mut best = worst_rate(bundle, considered, &DVector::zeros(bundle.input_dim));
    for d in directions {
        let d = d / d.amax();
        for k in 0..magnitudes {
            let u = &d * (bound * 0.5f64.powi(k as i32));
            best = best.min(worst_rate(bundle, considered, &u));
        }
    }
    best
}

pub fn random_row<R: Rng>(rng: &mut R, m: usize, lf_range: f64) -> LieRow {
    let lg = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    let lf = if lf_range > 0.0 { rng.gen_range(-lf_range..lf_range) } else { 0.0 };
    LieRow::new(rng.gen_range(0.1..3.0), rng.gen_range(0.0..3.0), lf, lg)
}

pub fn random_bundle<R: Rng>(rng: &mut R, m: usize, n: usize, lf_range: f64) -> LieBundle {
    LieBundle::new(m, (0..n).map(|_| random_row(rng, m, lf_range)).collect())
}

/// Lists every pair of nonempty task subsets `(P, Q)` by bitmask.
pub fn subset_pairs(n: usize) -> Vec<(u32, u32)> {
    let full = 1u32 << n;
    (1..full).flat_map(|p| (1..full).map(move |q| (p, q))).collect()
}

pub fn subset_sum(bundle: &LieBundle, mask: u32) -> DVector<f64> {
    let mut s = DVector::zeros(bundle.input_dim);
    for (i, r) in bundle.rows.iter().enumerate() {
        if mask & (1 << i) != 0 {
            s += &r.lg;
        }
    }
    s
}

pub fn dense(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}
