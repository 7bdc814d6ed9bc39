//! Reverse-mode automatic differentiation on a per-sequence tape.
//!
//! Nodes hold dense row-major values; vectors are `1 × n`. Each sequence in
//! a batch gets its own [`Graph`], so tapes never need locking. Several
//! model-specific densities are fused into single nodes with hand-derived
//! gradients.

use super::params::{ParamId, ParamStore};
use crate::numerics::{log_sigmoid, sigmoid, softplus};
use crate::ou_prior::HALF_LN_2PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

#[derive(Debug)]
struct GruCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Linear { w: Var, b: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Stack(Vec<Var>),
    VStack(Var, Var),
    ConstMatMul { op: Arc<Vec<f64>>, a: Var },
    RowCombo { a: Var, terms: Vec<(usize, f64)> },
    EulerStep { z: Var, drift: Var, nu: Var, dw: Vec<f64>, dt: f64 },
    Gru { x: Var, h: Var, wi: Var, wh: Var, bi: Var, bh: Var, cache: Box<GruCache> },
    NormalLogp { x: Var, mean: Var, std: Var },
    GaussianNll { pred: Var, target: Vec<f64>, sigma: f64 },
    OuTransition { prev: Var, next: Var, log_nu: Var, dt: f64 },
    EulerTransition { prev: Var, next: Var, drift: Var, log_nu: Var, dt: f64 },
    SlTruncLogpdf { x: f64, mu: Var, s: Var, t_max: f64 },
    SlLogSurvival { r: f64, mu: Var, s: Var, t_max: f64 },
    DiscMixNll { params: Var, target: Vec<u8>, k: usize },
}

/// Gradients of one backward sweep, indexed by node.
pub struct Grads(Vec<Vec<f64>>);

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        let g = &self.0[v.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// Smallest log-scale a discretized logistic component may take.
pub const MIN_LOG_SCALE: f64 = -7.0;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    fn vector(&mut self, value: Vec<f64>, op: Op) -> Var {
        let n = value.len();
        self.push(value, 1, n, op)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.vector(value, Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(value, rows, cols, Op::Leaf)
    }

    /// A copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let (rows, cols) = self.shape(v);
        let value = self.value(v).to_vec();
        self.push(value, rows, cols, Op::Leaf)
    }

    /// Loads a parameter, copying it into the tape once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.0) {
            return *v;
        }
        let t = store.tensor(id);
        let v = self.push(t.data.clone(), t.rows, t.cols, Op::Param);
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        v
    }

    pub fn linear(&mut self, w: Var, b: Var, x: Var) -> Var {
        let (out, inp) = self.shape(w);
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        debug_assert_eq!(xv.len(), inp);
        let y = (0..out)
            .map(|i| {
                let row = &wv[i * inp..(i + 1) * inp];
                bv[i] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.vector(y, Op::Linear { w, b, x })
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (rows, cols) = self.shape(a);
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        self.push(y, rows, cols, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (rows, cols) = self.shape(a);
        let y = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(y, rows, cols, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let y = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.vector(y, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a)[start..start + len].to_vec();
        self.vector(y, Op::Slice(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.vector(vec![s], Op::Sum(a))
    }

    /// Sums scalars in order, as a chain of additions.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Stacks equal-length vectors as matrix rows.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        let cols = self.value(rows[0]).len();
        let mut y = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            debug_assert_eq!(self.value(*r).len(), cols);
            y.extend_from_slice(self.value(*r));
        }
        self.push(y, rows.len(), cols, Op::Stack(rows.to_vec()))
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        debug_assert_eq!(ca, cb);
        let mut y = self.value(a).to_vec();
        y.extend_from_slice(self.value(b));
        self.push(y, ra + rb, ca, Op::VStack(a, b))
    }

    /// Left-multiplies a matrix node by a constant square matrix.
    pub fn const_matmul(&mut self, op: Arc<Vec<f64>>, a: Var) -> Var {
        let (n, cols) = self.shape(a);
        debug_assert_eq!(op.len(), n * n);
        let av = self.value(a);
        let mut y = vec![0.0; n * cols];
        for i in 0..n {
            let out = &mut y[i * cols..(i + 1) * cols];
            for k in 0..n {
                let c = op[i * n + k];
                if c != 0.0 {
                    for (o, x) in out.iter_mut().zip(&av[k * cols..(k + 1) * cols]) {
                        *o += c * x;
                    }
                }
            }
        }
        self.push(y, n, cols, Op::ConstMatMul { op, a })
    }

    /// Weighted sum of rows of a matrix node.
    pub fn row_combo(&mut self, a: Var, terms: Vec<(usize, f64)>) -> Var {
        let cols = self.shape(a).1;
        let av = self.value(a);
        let mut y = vec![0.0; cols];
        for &(r, c) in &terms {
            for (o, x) in y.iter_mut().zip(&av[r * cols..(r + 1) * cols]) {
                *o += c * x;
            }
        }
        self.vector(y, Op::RowCombo { a, terms })
    }

    /// `z + dt·drift + nu ⊙ dw`.
    pub fn euler_step(&mut self, z: Var, drift: Var, nu: Var, dw: Vec<f64>, dt: f64) -> Var {
        let (zv, fv, nv) = (self.value(z), self.value(drift), self.value(nu));
        let y = (0..zv.len()).map(|i| zv[i] + dt * fv[i] + nv[i] * dw[i]).collect();
        self.vector(y, Op::EulerStep { z, drift, nu, dw, dt })
    }

    /// One GRU cell update with gate order (reset, update, candidate).
    pub fn gru_cell(&mut self, x: Var, h: Var, wi: Var, wh: Var, bi: Var, bh: Var) -> Var {
        let hs = self.value(h).len();
        let gi = mat_vec(self.value(wi), self.value(x), self.value(bi));
        let gh = mat_vec(self.value(wh), self.value(h), self.value(bh));
        let hv = self.value(h);
        let mut cache = GruCache { r: vec![0.0; hs], z: vec![0.0; hs], n: vec![0.0; hs], hn: vec![0.0; hs] };
        let mut out = vec![0.0; hs];
        for j in 0..hs {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hs + j] + gh[hs + j]);
            let hn = gh[2 * hs + j];
            let n = (gi[2 * hs + j] + r * hn).tanh();
            out[j] = (1.0 - z) * n + z * hv[j];
            cache.r[j] = r;
            cache.z[j] = z;
            cache.n[j] = n;
            cache.hn[j] = hn;
        }
        self.vector(out, Op::Gru { x, h, wi, wh, bi, bh, cache: Box::new(cache) })
    }

    /// `Σ log N(x; mean, std²)`.
    pub fn normal_logp(&mut self, x: Var, mean: Var, std: Var) -> Var {
        let (xv, mv, sv) = (self.value(x), self.value(mean), self.value(std));
        let s = (0..xv.len())
            .map(|i| {
                let u = (xv[i] - mv[i]) / sv[i];
                -0.5 * u * u - sv[i].ln() - HALF_LN_2PI
            })
            .sum();
        self.vector(vec![s], Op::NormalLogp { x, mean, std })
    }

    /// `−Σ log N(target; pred, sigma²)`.
    pub fn gaussian_nll(&mut self, pred: Var, target: Vec<f64>, sigma: f64) -> Var {
        let s = self
            .value(pred)
            .iter()
            .zip(&target)
            .map(|(p, t)| {
                let u = (t - p) / sigma;
                0.5 * u * u + sigma.ln() + HALF_LN_2PI
            })
            .sum();
        self.vector(vec![s], Op::GaussianNll { pred, target, sigma })
    }

    /// Summed log-density of the exact OU transition `prev → next` over `dt`.
    pub fn ou_transition(&mut self, prev: Var, next: Var, log_nu: Var, dt: f64) -> Var {
        let (pv, nv, lv) = (self.value(prev), self.value(next), self.value(log_nu));
        let s = (0..pv.len())
            .map(|i| {
                let t = ou_terms(lv[i], dt);
                let r = nv[i] - t.a * pv[i];
                -0.5 * (2.0 * std::f64::consts::PI * t.v).ln() - 0.5 * r * r / t.v
            })
            .sum();
        self.vector(vec![s], Op::OuTransition { prev, next, log_nu, dt })
    }

    /// Summed Euler pseudo-likelihood `log N(next; prev + dt·drift, dt·ν²)`.
    pub fn euler_transition(&mut self, prev: Var, next: Var, drift: Var, log_nu: Var, dt: f64) -> Var {
        let (pv, nv, fv, lv) = (self.value(prev), self.value(next), self.value(drift), self.value(log_nu));
        let s = (0..pv.len())
            .map(|i| {
                let v = dt * (2.0 * lv[i]).exp();
                let r = nv[i] - pv[i] - dt * fv[i];
                -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * r * r / v
            })
            .sum();
        self.vector(vec![s], Op::EulerTransition { prev, next, drift, log_nu, dt })
    }

    /// Truncated SoftplusLogistic log-density of a constant gap `x`.
    pub fn sl_trunc_logpdf(&mut self, x: f64, mu: Var, s: Var, t_max: f64) -> Var {
        let d = crate::tpp::SoftplusLogistic::new(self.scalar(mu), self.scalar(s), t_max);
        let v = crate::tpp::GapDistribution::logpdf(&d, x);
        self.vector(vec![v], Op::SlTruncLogpdf { x, mu, s, t_max })
    }

    /// Truncated SoftplusLogistic log-survival at a constant remaining time `r`.
    pub fn sl_log_survival(&mut self, r: f64, mu: Var, s: Var, t_max: f64) -> Var {
        let d = crate::tpp::SoftplusLogistic::new(self.scalar(mu), self.scalar(s), t_max);
        let v = crate::tpp::GapDistribution::log_survival(&d, r);
        self.vector(vec![v], Op::SlLogSurvival { r, mu, s, t_max })
    }

    /// Negative log-likelihood of 8-bit `target` under a discretized logistic
    /// mixture. `params` holds, per channel, `k` logits, `k` means and `k`
    /// log-scales.
    pub fn disc_mix_nll(&mut self, params: Var, target: Vec<u8>, k: usize) -> Var {
        let pv = self.value(params);
        let s = target
            .iter()
            .enumerate()
            .map(|(c, &x)| -disc_mix_channel(&pv[c * 3 * k..(c + 1) * 3 * k], x, k).logp)
            .sum();
        self.vector(vec![s], Op::DiscMixNll { params, target, k })
    }

    /// Reverse sweep from a scalar `loss` seeded with gradient `seed`.
    pub fn backward_seeded(&self, loss: Var, seed: f64) -> Grads {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![seed];
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.propagate(idx, &g, &mut grads);
            grads[idx] = g;
        }
        Grads(grads)
    }

    pub fn backward(&self, loss: Var) -> Grads {
        self.backward_seeded(loss, 1.0)
    }

    /// Gradients of every parameter touched by this graph.
    pub fn param_grads<'g>(&self, grads: &'g Grads) -> Vec<(ParamId, &'g [f64])> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| grads.wrt(v).map(|g| (ParamId(i), g))))
            .collect()
    }

    /// Adds this graph's parameter gradients into a store-shaped buffer.
    pub fn accumulate_param_grads(&self, grads: &Grads, into: &mut [Vec<f64>]) {
        for (id, g) in self.param_grads(grads) {
            for (a, b) in into[id.0].iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { w, b, x } => {
                let (out, inp) = self.shape(*w);
                let wv = val(*w);
                let xv = val(*x);
                {
                    let gw = slot(grads, *w, out * inp);
                    for i in 0..out {
                        for j in 0..inp {
                            gw[i * inp + j] += g[i] * xv[j];
                        }
                    }
                }
                add_into(slot(grads, *b, out), g);
                let gx = slot(grads, *x, inp);
                for i in 0..out {
                    let row = &wv[i * inp..(i + 1) * inp];
                    for j in 0..inp {
                        gx[j] += row[j] * g[i];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                for (o, x) in gb.iter_mut().zip(g) {
                    *o -= x;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
                let gb = slot(grads, *b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                for (o, x) in ga.iter_mut().zip(g) {
                    *o += c * x;
                }
            }
            Op::Offset(a) => add_into(slot(grads, *a, g.len()), g),
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - node.value[i] * node.value[i]);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * node.value[i] * (1.0 - node.value[i]);
                }
            }
            Op::Softplus(a) => {
                let av = val(*a);
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * sigmoid(av[i]);
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * node.value[i];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    add_into(slot(grads, *p, n), &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = val(*a).len();
                add_into(&mut slot(grads, *a, n)[*start..*start + g.len()], g);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                for o in slot(grads, *a, n).iter_mut() {
                    *o += g[0];
                }
            }
            Op::Stack(rows) => {
                let cols = node.cols;
                for (r, v) in rows.iter().enumerate() {
                    add_into(slot(grads, *v, cols), &g[r * cols..(r + 1) * cols]);
                }
            }
            Op::VStack(a, b) => {
                let na = val(*a).len();
                add_into(slot(grads, *a, na), &g[..na]);
                let nb = val(*b).len();
                add_into(slot(grads, *b, nb), &g[na..]);
            }
            Op::ConstMatMul { op, a } => {
                let (n, cols) = (node.rows, node.cols);
                let ga = slot(grads, *a, n * cols);
                for i in 0..n {
                    for k in 0..n {
                        let c = op[i * n + k];
                        if c != 0.0 {
                            let src = &g[i * cols..(i + 1) * cols];
                            for (o, x) in ga[k * cols..(k + 1) * cols].iter_mut().zip(src) {
                                *o += c * x;
                            }
                        }
                    }
                }
            }
            Op::RowCombo { a, terms } => {
                let cols = node.cols;
                let n = val(*a).len();
                let ga = slot(grads, *a, n);
                for &(r, c) in terms {
                    for (o, x) in ga[r * cols..(r + 1) * cols].iter_mut().zip(g) {
                        *o += c * x;
                    }
                }
            }
            Op::EulerStep { z, drift, nu, dw, dt } => {
                add_into(slot(grads, *z, g.len()), g);
                let gf = slot(grads, *drift, g.len());
                for i in 0..g.len() {
                    gf[i] += dt * g[i];
                }
                let gn = slot(grads, *nu, g.len());
                for i in 0..g.len() {
                    gn[i] += dw[i] * g[i];
                }
            }
            Op::Gru { x, h, wi, wh, bi, bh, cache } => {
                let hs = g.len();
                let (xv, hv) = (val(*x), val(*h));
                let mut d_i = vec![0.0; 3 * hs];
                let mut d_h = vec![0.0; 3 * hs];
                let mut dh_direct = vec![0.0; hs];
                for j in 0..hs {
                    let (r, z, n, hn) = (cache.r[j], cache.z[j], cache.n[j], cache.hn[j]);
                    let dn = g[j] * (1.0 - z);
                    let dz = g[j] * (hv[j] - n);
                    dh_direct[j] = g[j] * z;
                    let dpre_n = dn * (1.0 - n * n);
                    let dpre_z = dz * z * (1.0 - z);
                    let dpre_r = dpre_n * hn * r * (1.0 - r);
                    d_i[j] = dpre_r;
                    d_i[hs + j] = dpre_z;
                    d_i[2 * hs + j] = dpre_n;
                    d_h[j] = dpre_r;
                    d_h[hs + j] = dpre_z;
                    d_h[2 * hs + j] = dpre_n * r;
                }
                outer_into(slot(grads, *wi, 3 * hs * xv.len()), &d_i, xv);
                add_into(slot(grads, *bi, 3 * hs), &d_i);
                outer_into(slot(grads, *wh, 3 * hs * hs), &d_h, hv);
                add_into(slot(grads, *bh, 3 * hs), &d_h);
                let wiv = val(*wi);
                let gx = slot(grads, *x, xv.len());
                mat_t_vec_into(gx, wiv, &d_i);
                let whv = val(*wh);
                let gh = slot(grads, *h, hs);
                mat_t_vec_into(gh, whv, &d_h);
                add_into(gh, &dh_direct);
            }
            Op::NormalLogp { x, mean, std } => {
                let (xv, mv, sv) = (val(*x), val(*mean), val(*std));
                let n = xv.len();
                let d: Vec<f64> = (0..n).map(|i| (xv[i] - mv[i]) / (sv[i] * sv[i])).collect();
                let gx = slot(grads, *x, n);
                for i in 0..n {
                    gx[i] -= g[0] * d[i];
                }
                let gm = slot(grads, *mean, n);
                for i in 0..n {
                    gm[i] += g[0] * d[i];
                }
                let gs = slot(grads, *std, n);
                for i in 0..n {
                    let u = (xv[i] - mv[i]) / sv[i];
                    gs[i] += g[0] * (u * u - 1.0) / sv[i];
                }
            }
            Op::GaussianNll { pred, target, sigma } => {
                let pv = val(*pred);
                let gp = slot(grads, *pred, pv.len());
                let inv = 1.0 / (sigma * sigma);
                for i in 0..pv.len() {
                    gp[i] += g[0] * (pv[i] - target[i]) * inv;
                }
            }
            Op::OuTransition { prev, next, log_nu, dt } => {
                let (pv, nv, lv) = (val(*prev), val(*next), val(*log_nu));
                let n = pv.len();
                let mut dprev = vec![0.0; n];
                let mut dnext = vec![0.0; n];
                let mut dlog = vec![0.0; n];
                for i in 0..n {
                    let t = ou_terms(lv[i], *dt);
                    let r = nv[i] - t.a * pv[i];
                    dnext[i] = -r / t.v;
                    dprev[i] = t.a * r / t.v;
                    let d_a = pv[i] * r / t.v;
                    let d_v = -0.5 / t.v + 0.5 * r * r / (t.v * t.v);
                    dlog[i] = d_a * t.da_dlog + d_v * t.dv_dlog;
                }
                scaled_into(slot(grads, *prev, n), &dprev, g[0]);
                scaled_into(slot(grads, *next, n), &dnext, g[0]);
                scaled_into(slot(grads, *log_nu, n), &dlog, g[0]);
            }
            Op::EulerTransition { prev, next, drift, log_nu, dt } => {
                let (pv, nv, fv, lv) = (val(*prev), val(*next), val(*drift), val(*log_nu));
                let n = pv.len();
                let mut dr = vec![0.0; n];
                let mut dlog = vec![0.0; n];
                for i in 0..n {
                    let v = dt * (2.0 * lv[i]).exp();
                    let r = nv[i] - pv[i] - dt * fv[i];
                    dr[i] = -r / v;
                    dlog[i] = -1.0 + r * r / v;
                }
                scaled_into(slot(grads, *next, n), &dr, g[0]);
                scaled_into(slot(grads, *prev, n), &dr, -g[0]);
                scaled_into(slot(grads, *drift, n), &dr, -g[0] * dt);
                scaled_into(slot(grads, *log_nu, n), &dlog, g[0]);
            }
            Op::SlTruncLogpdf { x, mu, s, t_max } => {
                let (m, sc) = (val(*mu)[0], val(*s)[0]);
                let u = (crate::numerics::inv_softplus(*x) - m) / sc;
                let core = 1.0 - 2.0 * sigmoid(u);
                let mut dmu = -core / sc;
                let mut ds = -core * u / sc - 1.0 / sc;
                if t_max.is_finite() {
                    let um = (crate::numerics::inv_softplus(*t_max) - m) / sc;
                    let tail = sigmoid(-um);
                    dmu += tail / sc;
                    ds += tail * um / sc;
                }
                slot(grads, *mu, 1)[0] += g[0] * dmu;
                slot(grads, *s, 1)[0] += g[0] * ds;
            }
            Op::SlLogSurvival { r, mu, s, t_max } => {
                let (m, sc) = (val(*mu)[0], val(*s)[0]);
                let ur = (crate::numerics::inv_softplus(*r) - m) / sc;
                let (d_um, d_ur, um) = if t_max.is_finite() {
                    let um = (crate::numerics::inv_softplus(*t_max) - m) / sc;
                    let log_d = crate::numerics::log_sigmoid_diff(um, ur);
                    let dens = |u: f64| (log_sigmoid(u) + log_sigmoid(-u) - log_d).exp();
                    (dens(um) - sigmoid(-um), -dens(ur), um)
                } else {
                    (0.0, -sigmoid(ur), 0.0)
                };
                let dmu = -(d_um + d_ur) / sc;
                let ds = -(d_um * um + d_ur * ur) / sc;
                slot(grads, *mu, 1)[0] += g[0] * dmu;
                slot(grads, *s, 1)[0] += g[0] * ds;
            }
            Op::DiscMixNll { params, target, k } => {
                let pv = val(*params);
                let gp = slot(grads, *params, pv.len());
                for (c, &x) in target.iter().enumerate() {
                    let base = c * 3 * k;
                    let ch = disc_mix_channel(&pv[base..base + 3 * k], x, *k);
                    for j in 0..*k {
                        gp[base + j] -= g[0] * ch.d_logit[j];
                        gp[base + k + j] -= g[0] * ch.d_mean[j];
                        gp[base + 2 * k + j] -= g[0] * ch.d_log_scale[j];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Vec<f64>], v: Var, n: usize) -> &mut [f64] {
    let g = &mut grads[v.0];
    if g.is_empty() {
        *g = vec![0.0; n];
    }
    g
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn scaled_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += c * b;
    }
}

fn outer_into(dst: &mut [f64], left: &[f64], right: &[f64]) {
    let n = right.len();
    for (i, l) in left.iter().enumerate() {
        if *l != 0.0 {
            for (o, r) in dst[i * n..(i + 1) * n].iter_mut().zip(right) {
                *o += l * r;
            }
        }
    }
}

fn mat_t_vec_into(dst: &mut [f64], w: &[f64], v: &[f64]) {
    let n = dst.len();
    for (i, vi) in v.iter().enumerate() {
        if *vi != 0.0 {
            for (o, wij) in dst.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *o += wij * vi;
            }
        }
    }
}

/// `W x + b` for a row-major `W`.
pub fn mat_vec(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * n..(i + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

struct OuTerms {
    a: f64,
    v: f64,
    da_dlog: f64,
    dv_dlog: f64,
}

fn ou_terms(log_nu: f64, dt: f64) -> OuTerms {
    let nu2 = (2.0 * log_nu).exp();
    let u = nu2 * dt;
    let a = (-0.5 * u).exp();
    let v = -(-u).exp_m1();
    // d/d log ν of u is 2u
    OuTerms { a, v, da_dlog: -u * a, dv_dlog: 2.0 * u * (-u).exp() }
}

/// Log-probability of one 8-bit channel value and its parameter gradients.
pub struct DiscMixChannel {
    pub logp: f64,
    pub d_logit: Vec<f64>,
    pub d_mean: Vec<f64>,
    pub d_log_scale: Vec<f64>,
}

/// Bin half-width on the `[-1, 1]` scale used for 8-bit values.
pub const HALF_BIN: f64 = 1.0 / 255.0;

pub fn byte_to_unit(x: u8) -> f64 {
    x as f64 / 127.5 - 1.0
}

pub fn disc_mix_channel(p: &[f64], x: u8, k: usize) -> DiscMixChannel {
    let logits = &p[..k];
    let means = &p[k..2 * k];
    let y = byte_to_unit(x);
    let lse = crate::numerics::log_sum_exp(logits);
    let mut comp = vec![0.0; k];
    let mut d_mean_c = vec![0.0; k];
    let mut d_ls_c = vec![0.0; k];
    for j in 0..k {
        let raw_ls = p[2 * k + j];
        let clamped = raw_ls < MIN_LOG_SCALE;
        let inv_s = (-raw_ls.max(MIN_LOG_SCALE)).exp();
        let a = (y + HALF_BIN - means[j]) * inv_s;
        let b = (y - HALF_BIN - means[j]) * inv_s;
        // d log P / d a and d log P / d b
        let (lp, da, db) = if x == 0 {
            (log_sigmoid(a), sigmoid(-a), 0.0)
        } else if x == 255 {
            (log_sigmoid(-b), 0.0, -sigmoid(b))
        } else {
            let ld = crate::numerics::log_sigmoid_diff(a, b);
            let dens = |u: f64| (log_sigmoid(u) + log_sigmoid(-u) - ld).exp();
            (ld, dens(a), -dens(b))
        };
        comp[j] = logits[j] - lse + lp;
        d_mean_c[j] = -(da + db) * inv_s;
        d_ls_c[j] = if clamped { 0.0 } else { -(da * a + db * b) };
    }
    let logp = crate::numerics::log_sum_exp(&comp);
    let resp: Vec<f64> = comp.iter().map(|c| (c - logp).exp()).collect();
    let d_logit = (0..k).map(|j| resp[j] - (logits[j] - lse).exp()).collect();
    let d_mean = (0..k).map(|j| resp[j] * d_mean_c[j]).collect();
    let d_log_scale = (0..k).map(|j| resp[j] * d_ls_c[j]).collect();
    DiscMixChannel { logp, d_logit, d_mean, d_log_scale }
}

/// Probabilities of all 256 values of one channel.
pub fn disc_mix_pmf(p: &[f64], k: usize) -> Vec<f64> {
    let logits = &p[..k];
    let lse = crate::numerics::log_sum_exp(logits);
    let weights: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let cdf = |e: f64| -> f64 {
        (0..k)
            .map(|j| {
                let inv_s = (-p[2 * k + j].max(MIN_LOG_SCALE)).exp();
                weights[j] * sigmoid((e - p[k + j]) * inv_s)
            })
            .sum()
    };
    let mut out = Vec::with_capacity(256);
    let mut prev = 0.0;
    for x in 0..256u32 {
        let next = if x == 255 { 1.0 } else { cdf(byte_to_unit(x as u8) + HALF_BIN) };
        out.push((next - prev).max(0.0));
        prev = next;
    }
    out
}
