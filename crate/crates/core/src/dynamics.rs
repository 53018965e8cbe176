//! Deterministic control-affine systems `ẋ = f(x) + g(x) u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative tolerance for [`SystemModel::has_full_row_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("expected a state of length {expected}, got {got}")]
    StateShape { expected: usize, got: usize },
    #[error("drift f(x) returned length {got}, expected {expected}")]
    DriftShape { expected: usize, got: usize },
    #[error("input matrix g(x) returned {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    InputMatrixShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("box bounds must satisfy lower < upper componentwise (axis {axis}: {lower} >= {upper})")]
    EmptyBox { axis: usize, lower: f64, upper: f64 },
    #[error("box bounds have mismatched lengths {lower} and {upper}")]
    BoxShape { lower: usize, upper: usize },
}

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type InputFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A control-affine system with `state_dim` states and `input_dim` inputs.
///
/// Cloning is cheap: the vector fields are reference counted.
#[derive(Clone)]
pub struct SystemModel {
    state_dim: usize,
    input_dim: usize,
    label: String,
    drift: Arc<DriftFn>,
    input_matrix: Arc<InputFn>,
    drift_free: bool,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("label", &self.label)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

impl SystemModel {
    /// Builds a model from arbitrary vector fields.
    pub fn from_fns<F, G>(
        label: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        drift: F,
        input_matrix: G,
    ) -> Result<Self, DynamicsError>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if state_dim == 0 || input_dim == 0 {
            return Err(DynamicsError::InvalidParameters(
                "state and input dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            state_dim,
            input_dim,
            label: label.into(),
            drift: Arc::new(drift),
            input_matrix: Arc::new(input_matrix),
            drift_free: false,
        })
    }

    /// `ẋ = u` with `n = m = dim`.
    pub fn single_integrator(dim: usize) -> Self {
        assert!(dim > 0, "single integrator needs a positive dimension");
        Self {
            state_dim: dim,
            input_dim: dim,
            label: "single_integrator".into(),
            drift: Arc::new(move |_| DVector::zeros(dim)),
            input_matrix: Arc::new(move |_| DMatrix::identity(dim, dim)),
            drift_free: true,
        }
    }

    /// `ẋ = A x + B u` with constant matrices.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(DynamicsError::InvalidParameters(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(DynamicsError::InvalidParameters(format!(
                "B must have {} rows and at least one column, got {}x{}",
                n,
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        let drift_free = a.iter().all(|v| *v == 0.0);
        Ok(Self {
            state_dim: n,
            input_dim: m,
            label: "linear".into(),
            drift: Arc::new(move |x| &a * x),
            input_matrix: Arc::new(move |_| b.clone()),
            drift_free,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when `f ≡ 0` is known structurally.
    pub fn is_drift_free(&self) -> bool {
        self.drift_free
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<(), DynamicsError> {
        if x.len() != self.state_dim {
            return Err(DynamicsError::StateShape {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        self.check_state(x)?;
        let v = (self.drift)(x);
        if v.len() != self.state_dim {
            return Err(DynamicsError::DriftShape {
                expected: self.state_dim,
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn eval_g(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
        self.check_state(x)?;
        let g = (self.input_matrix)(x);
        if g.shape() != (self.state_dim, self.input_dim) {
            return Err(DynamicsError::InputMatrixShape {
                rows: g.nrows(),
                cols: g.ncols(),
                expected_rows: self.state_dim,
                expected_cols: self.input_dim,
            });
        }
        Ok(g)
    }

    /// Closed-loop velocity `f(x) + g(x) u`.
    pub fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        if u.len() != self.input_dim {
            return Err(DynamicsError::InvalidParameters(format!(
                "input of length {} for a model with {} inputs",
                u.len(),
                self.input_dim
            )));
        }
        Ok(self.eval_f(x)? + self.eval_g(x)? * u)
    }

    /// Whether `g(x)` has full row rank, judged by `σ_min > tol · σ_max`.
    pub fn has_full_row_rank(&self, x: &DVector<f64>, tol: f64) -> Result<bool, DynamicsError> {
        if !(tol >= 0.0) {
            return Err(DynamicsError::InvalidParameters(format!(
                "rank tolerance must be nonnegative, got {tol}"
            )));
        }
        Ok(full_row_rank(&self.eval_g(x)?, tol))
    }
}

/// Relative singular-value test for full row rank of an `n x m` matrix.
pub fn full_row_rank(g: &DMatrix<f64>, tol: f64) -> bool {
    let (n, m) = g.shape();
    if n > m {
        return false;
    }
    if n == 0 {
        return true;
    }
    let sv = g.clone().svd(false, false).singular_values;
    let largest = sv.max();
    let smallest = sv.min();
    let scale = if largest == 0.0 { 1.0 } else { largest };
    smallest > tol * scale
}

/// Axis-aligned box `{x : lower <= x <= upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxRegion {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, DynamicsError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(DynamicsError::BoxShape {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for axis in 0..lower.len() {
            if !(lower[axis] < upper[axis]) {
                return Err(DynamicsError::EmptyBox {
                    axis,
                    lower: lower[axis],
                    upper: upper[axis],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Square box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, DynamicsError> {
        Self::new(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= self.lower[k] - tol && v <= self.upper[k] + tol)
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(k, &v)| v.clamp(self.lower[k], self.upper[k])),
        )
    }

    /// Evenly spaced coordinates along one axis, endpoints included.
    pub fn axis_points(&self, axis: usize, count: usize) -> Vec<f64> {
        linspace(self.lower[axis], self.upper[axis], count)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| if i == count - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}
