//! Dense and sparse kernels shared by every layer, plus a central-difference
//! gradient checker.
//!
//! All kernels run in `f64` with a fixed loop order so repeated calls on the
//! same inputs are bit-identical.

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Wraps row-major `data`, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        let m = DenseMatrix { rows, cols, data };
        m.ensure_finite("matrix construction")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "add_scaled",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_inputs(op: &'static str, a: &DenseMatrix, b: &DenseMatrix, ok: bool) -> Result<()> {
    if !ok {
        return Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    a.ensure_finite(op)?;
    b.ensure_finite(op)
}

/// `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inputs("matmul", a, b, a.cols == b.rows)?;
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inputs("matmul_tn", a, b, a.rows == b.rows)?;
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let b_row = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            for (o, &bkj) in out.row_mut(i).iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_inputs("matmul_nt", a, b, a.cols == b.cols)?;
    Ok(DenseMatrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Sparse-dense product `adj · h`; row `i` accumulates its neighbors in
/// column order.
pub fn spmm(adj: &NormalizedAdjacency, h: &DenseMatrix) -> Result<DenseMatrix> {
    if adj.num_nodes() != h.rows {
        return Err(Error::Shape {
            op: "spmm",
            lhs: (adj.num_nodes(), adj.num_nodes()),
            rhs: h.shape(),
        });
    }
    h.ensure_finite("spmm")?;
    let mut out = DenseMatrix::zeros(h.rows, h.cols);
    for i in 0..h.rows {
        let out_row = &mut out.data[i * h.cols..(i + 1) * h.cols];
        for (j, w) in adj.row(i) {
            for (o, &v) in out_row.iter_mut().zip(h.row(j)) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Softmax applied independently to each segment `offsets[s]..offsets[s+1]`
/// of `logits`, shifted by the segment maximum.
pub fn segment_softmax(logits: &[f64], offsets: &[usize]) -> Result<Vec<f64>> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&logits.len()) {
        return Err(Error::Input(
            "segment offsets must start at 0 and end at the sequence length".into(),
        ));
    }
    let mut out = vec![0.0; logits.len()];
    for (s, w) in offsets.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            return Err(Error::Input(format!("segment {s} is empty")));
        }
        let seg = &logits[lo..hi];
        if seg.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segment_softmax"));
        }
        let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &l) in out[lo..hi].iter_mut().zip(seg) {
            *o = (l - max).exp();
            total += *o;
        }
        for o in &mut out[lo..hi] {
            *o /= total;
        }
    }
    Ok(out)
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x < 0.0 {
                    s * x
                } else {
                    x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`. ReLU uses subgradient 0 at 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x < 0.0 {
                    s
                } else {
                    1.0
                }
            }
            Activation::Sigmoid => {
                let y = sigmoid(x);
                y * (1.0 - y)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(m: &DenseMatrix, kind: Activation) -> DenseMatrix {
    m.map(|v| kind.apply(v))
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

pub const DEFAULT_GRAD_CHECK_STEP: f64 = 1e-5;

/// Lower bound on the denominator of the relative error, as a fraction of
/// `max(1, |f(at)|)`. Rounding in `f` limits the difference quotient to an
/// absolute resolution near `1e-16·|f| / h`, so entries far below this
/// floor are compared absolutely.
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-5;

/// Checks `f`'s analytic gradient at `at` against `(f(x+h) - f(x-h)) / 2h`
/// coordinate by coordinate. `f` returns `(value, gradient)`; only the value
/// is used at the perturbed points.
///
/// Each entry's error is `|a - n| / max(|a|, |n|, floor)` with
/// `floor = GRAD_CHECK_SCALE_FLOOR · max(1, |f(at)|)`.
pub fn grad_check<F>(mut f: F, at: &DenseMatrix, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&DenseMatrix) -> Result<(f64, DenseMatrix)>,
{
    let (value, analytic) = f(at)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check evaluation"));
    }
    let floor = GRAD_CHECK_SCALE_FLOOR * value.abs().max(1.0);
    if analytic.shape() != at.shape() {
        return Err(Error::Shape {
            op: "grad_check",
            lhs: at.shape(),
            rhs: analytic.shape(),
        });
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut x = at.clone();
    for i in 0..at.rows {
        for j in 0..at.cols {
            let orig = at.get(i, j);
            x.set(i, j, orig + h);
            let (plus, _) = f(&x)?;
            x.set(i, j, orig - h);
            let (minus, _) = f(&x)?;
            x.set(i, j, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("grad_check evaluation"));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(i, j);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error || (i, j) == (0, 0) {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_coordinate: (i, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
