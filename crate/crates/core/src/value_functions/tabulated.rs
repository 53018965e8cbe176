use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use super::ValueError;

/// Convergence tolerance the grid oracle uses unless told otherwise.
pub(crate) const DEFAULT_ORACLE_TOL: f64 = 1e-6;

const HEADER: &str = "vfgrid 1";

/// Node values on a rectangular grid, multilinearly interpolated.
///
/// Values are stored row-major: the last axis varies fastest. In two
/// dimensions the node `(i, j)` lives at `values[i * knots[1].len() + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedValue {
    knots: Vec<Vec<f64>>,
    values: Vec<f64>,
    strides: Vec<usize>,
}

impl TabulatedValue {
    pub fn new(knots: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self, ValueError> {
        if knots.is_empty() {
            return Err(ValueError::InvalidBackend("grid needs at least one axis".into()));
        }
        for (axis, k) in knots.iter().enumerate() {
            if k.len() < 2 {
                return Err(ValueError::InvalidBackend(format!("axis {axis} needs at least two knots")));
            }
            if k.iter().any(|v| !v.is_finite()) || k.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(ValueError::InvalidBackend(format!(
                    "knots on axis {axis} must be finite and strictly increasing"
                )));
            }
        }
        let count: usize = knots.iter().map(Vec::len).product();
        if values.len() != count {
            return Err(ValueError::InvalidBackend(format!(
                "grid has {count} nodes but {} values",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ValueError::InvalidBackend(format!(
                "node values must be finite and nonnegative, found {bad}"
            )));
        }
        let mut strides = vec![1; knots.len()];
        for axis in (0..knots.len() - 1).rev() {
            strides[axis] = strides[axis + 1] * knots[axis + 1].len();
        }
        Ok(Self { knots, values, strides })
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, index: &[usize]) -> f64 {
        self.values[self.flat_index(index)]
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Cell index and local coordinate in `[0, 1]` along one axis.
    fn locate(&self, axis: usize, v: f64) -> Result<(usize, f64, f64), ValueError> {
        let k = &self.knots[axis];
        let (lo, hi) = (k[0], k[k.len() - 1]);
        if !(v >= lo && v <= hi) {
            return Err(ValueError::OutOfDomain { axis, value: v, lo, hi });
        }
        // Rightmost cell whose left knot is <= v, capped at the last cell.
        let cell = k.partition_point(|&t| t <= v).saturating_sub(1).min(k.len() - 2);
        let width = k[cell + 1] - k[cell];
        Ok((cell, (v - k[cell]) / width, width))
    }

    fn cells(&self, x: &DVector<f64>) -> Result<Vec<(usize, f64, f64)>, ValueError> {
        if x.len() != self.dim() {
            return Err(ValueError::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        (0..self.dim()).map(|axis| self.locate(axis, x[axis])).collect()
    }

    fn corner_value(&self, cells: &[(usize, f64, f64)], corner: usize) -> f64 {
        let offset: usize = cells
            .iter()
            .enumerate()
            .map(|(axis, (c, _, _))| (c + ((corner >> axis) & 1)) * self.strides[axis])
            .sum();
        self.values[offset]
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, ValueError> {
        let cells = self.cells(x)?;
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim()) {
            let weight: f64 = cells
                .iter()
                .enumerate()
                .map(|(axis, (_, t, _))| if (corner >> axis) & 1 == 1 { *t } else { 1.0 - t })
                .product();
            if weight != 0.0 {
                total += weight * self.corner_value(&cells, corner);
            }
        }
        Ok(total)
    }

    /// Exact gradient of the interpolant inside the located cell.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, ValueError> {
        let cells = self.cells(x)?;
        let n = self.dim();
        let mut grad = DVector::zeros(n);
        for corner in 0..(1usize << n) {
            let v = self.corner_value(&cells, corner);
            for (k, g) in grad.iter_mut().enumerate() {
                let weight: f64 = cells
                    .iter()
                    .enumerate()
                    .map(|(axis, (_, t, width))| {
                        let upper = (corner >> axis) & 1 == 1;
                        match (axis == k, upper) {
                            (true, true) => 1.0 / width,
                            (true, false) => -1.0 / width,
                            (false, true) => *t,
                            (false, false) => 1.0 - t,
                        }
                    })
                    .product();
                *g += weight * v;
            }
        }
        Ok(grad)
    }

    /// Text form: header, one knot array per axis, then all node values.
    pub fn to_vfgrid_string(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for line in self.knots.iter().chain(std::iter::once(&self.values)) {
            for (i, v) in line.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                // `{}` on f64 prints the shortest string that parses back exactly.
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_vfgrid_str(text: &str) -> Result<Self, ValueError> {
        let parse_err = |reason: String| ValueError::Parse {
            what: "vfgrid".into(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == HEADER => {}
            other => return Err(parse_err(format!("expected header `{HEADER}`, found {other:?}"))),
        }
        let mut arrays = lines
            .enumerate()
            .map(|(i, line)| {
                line.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|e| parse_err(format!("line {}: `{tok}`: {e}", i + 2)))
                    })
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        if arrays.len() < 2 {
            return Err(parse_err("need at least one knot array and a value array".into()));
        }
        let values = arrays.pop().unwrap_or_default();
        Self::new(arrays, values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ValueError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_vfgrid_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ValueError> {
        std::fs::write(path, self.to_vfgrid_string())?;
        Ok(())
    }
}
