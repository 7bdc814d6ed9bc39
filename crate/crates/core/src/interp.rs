//! Interpolating splines over vector-valued knots.
//!
//! Both kinds are linear operators in the knot values, so every evaluation can
//! be written as a weight row over the knots. The autodiff graph uses the same
//! decomposition ([`CubicBasis`]) to differentiate through the hidden-state
//! spline.

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineKind {
    /// Natural cubic spline (zero second derivative at both ends).
    Cubic,
    Linear,
}

#[derive(Debug, Clone)]
pub struct Spline {
    kind: SplineKind,
    times: Vec<f64>,
    /// Row-major `times.len() x dim`.
    values: Vec<f64>,
    dim: usize,
    /// Second derivatives at the knots (cubic only), same layout as `values`.
    second: Vec<f64>,
}

fn check_knots(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return domain("a spline needs at least two knots");
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("knot times must be finite and strictly increasing");
    }
    Ok(())
}

/// Segment index `k` and weight `w` such that linear interpolation at `t`
/// is `(1 − w)·y[k] + w·y[k+1]` (clamped to the knot range).
pub fn linear_terms(times: &[f64], t: f64) -> (usize, f64) {
    let n = times.len();
    let t = t.clamp(times[0], times[n - 1]);
    let k = segment(times, t);
    (k, (t - times[k]) / (times[k + 1] - times[k]))
}

/// Index `k` of the segment `[times[k], times[k+1]]` containing `t` (clamped).
fn segment(times: &[f64], t: f64) -> usize {
    let n = times.len();
    let k = times.partition_point(|&x| x <= t);
    k.saturating_sub(1).min(n - 2)
}

/// Precomputed natural-cubic operator for a fixed set of knot times.
///
/// The second derivatives are `M = S · Y` with `S` an `n x n` matrix, and an
/// evaluation at `t` is `a·Y[k] + b·Y[k+1] + c·M[k] + d·M[k+1]`.
#[derive(Debug, Clone)]
pub struct CubicBasis {
    times: Vec<f64>,
    /// Row-major `n x n`.
    pub second_op: Vec<f64>,
}

/// Coefficients of one cubic evaluation, see [`CubicBasis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicTerms {
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CubicBasis {
    pub fn new(times: &[f64]) -> Result<Self> {
        check_knots(times)?;
        let n = times.len();
        let mut second_op = vec![0.0; n * n];
        if n > 2 {
            // Solve the tridiagonal system once per unit knot vector.
            let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            let m = n - 2;
            let diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
            let off: Vec<f64> = (0..m.saturating_sub(1)).map(|i| h[i + 1]).collect();
            let mut rhs = vec![0.0; m];
            let mut sol = vec![0.0; m];
            for j in 0..n {
                for (i, r) in rhs.iter_mut().enumerate() {
                    // Row i is the interior knot i+1.
                    let mut v = 0.0;
                    if j == i + 2 {
                        v += 6.0 / h[i + 1];
                    }
                    if j == i + 1 {
                        v -= 6.0 / h[i + 1] + 6.0 / h[i];
                    }
                    if j == i {
                        v += 6.0 / h[i];
                    }
                    *r = v;
                }
                solve_tridiagonal(&off, &diag, &off, &rhs, &mut sol);
                for (i, s) in sol.iter().enumerate() {
                    second_op[(i + 1) * n + j] = *s;
                }
            }
        }
        Ok(Self { times: times.to_vec(), second_op })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn terms(&self, t: f64) -> CubicTerms {
        let n = self.times.len();
        let t = t.clamp(self.times[0], self.times[n - 1]);
        let k = segment(&self.times, t);
        let h = self.times[k + 1] - self.times[k];
        let a = (self.times[k + 1] - t) / h;
        let b = 1.0 - a;
        CubicTerms { k, a, b, c: (a * a * a - a) * h * h / 6.0, d: (b * b * b - b) * h * h / 6.0 }
    }

    /// Full weight row over the knot values for an evaluation at `t`.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        let CubicTerms { k, a, b, c, d } = self.terms(t);
        let mut w = vec![0.0; n];
        w[k] += a;
        w[k + 1] += b;
        for j in 0..n {
            w[j] += c * self.second_op[k * n + j] + d * self.second_op[(k + 1) * n + j];
        }
        w
    }
}

/// Thomas algorithm for a tridiagonal system (`lower[i]` couples rows i+1 and i).
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], out: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i - 1] * c[i - 1];
        c[i] = if i < n - 1 { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
}

impl Spline {
    /// Fits a spline through `values` (row-major, `dim` per knot).
    pub fn fit(kind: SplineKind, times: &[f64], values: &[f64], dim: usize) -> Result<Self> {
        check_knots(times)?;
        if dim == 0 || values.len() != times.len() * dim {
            return domain("knot values must hold `dim` entries per knot");
        }
        let n = times.len();
        let second = match kind {
            SplineKind::Linear => Vec::new(),
            SplineKind::Cubic => {
                let basis = CubicBasis::new(times)?;
                let mut m = vec![0.0; n * dim];
                for i in 0..n {
                    for j in 0..n {
                        let s = basis.second_op[i * n + j];
                        if s != 0.0 {
                            for c in 0..dim {
                                m[i * dim + c] += s * values[j * dim + c];
                            }
                        }
                    }
                }
                m
            }
        };
        Ok(Self { kind, times: times.to_vec(), values: values.to_vec(), dim, second })
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Evaluates the spline at `t`, clamping to the knot range.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        let t = t.clamp(self.times[0], self.times[n - 1]);
        let k = segment(&self.times, t);
        let h = self.times[k + 1] - self.times[k];
        let d = self.dim;
        let (y0, y1) = (&self.values[k * d..(k + 1) * d], &self.values[(k + 1) * d..(k + 2) * d]);
        match self.kind {
            SplineKind::Linear => {
                let (_, w) = linear_terms(&self.times, t);
                for c in 0..d {
                    out[c] = (1.0 - w) * y0[c] + w * y1[c];
                }
            }
            SplineKind::Cubic => {
                let a = (self.times[k + 1] - t) / h;
                let b = 1.0 - a;
                let ca = (a * a * a - a) * h * h / 6.0;
                let cb = (b * b * b - b) * h * h / 6.0;
                let (m0, m1) = (&self.second[k * d..(k + 1) * d], &self.second[(k + 1) * d..(k + 2) * d]);
                for c in 0..d {
                    out[c] = a * y0[c] + b * y1[c] + ca * m0[c] + cb * m1[c];
                }
            }
        }
    }

    /// Jacobian row of `eval(t)[c]` with respect to the knot values of channel
    /// `c`; identical for every channel.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        match self.kind {
            SplineKind::Linear => {
                let (k, w) = linear_terms(&self.times, t);
                let mut row = vec![0.0; n];
                row[k] = 1.0 - w;
                row[k + 1] = w;
                row
            }
            SplineKind::Cubic => CubicBasis::new(&self.times).expect("validated at fit").weights(t),
        }
    }
}
