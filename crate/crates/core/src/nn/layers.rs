//! Dense MLPs and a bidirectional GRU built on [`Graph`].

use super::graph::{mat_vec, Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::numerics::sigmoid;
use rand::Rng;

fn uniform(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

/// Tanh MLP with a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inp, out) = (w[0], w[1]);
                let wid = store.add(&format!("{prefix}.w{i}"), out, inp, uniform(rng, out * inp, inp));
                let bid = store.add(&format!("{prefix}.b{i}"), 1, out, uniform(rng, out, inp));
                (wid, bid)
            })
            .collect();
        Self { layers }
    }

    /// Rebinds to the tensors of an existing store by name.
    pub fn bind(store: &ParamStore, prefix: &str, depth: usize) -> Option<Self> {
        let layers = (0..depth)
            .map(|i| Some((store.find(&format!("{prefix}.w{i}"))?, store.find(&format!("{prefix}.b{i}"))?)))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { layers })
    }

    pub fn output_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("mlp has layers")
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let w = g.param(store, *w);
            let b = g.param(store, *b);
            h = g.linear(w, b, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        h
    }

    /// Same computation as [`Mlp::forward`] without a tape.
    pub fn forward_plain(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = mat_vec(&store.tensor(*w).data, &h, &store.tensor(*b).data);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wi: ParamId,
    pub wh: ParamId,
    pub bi: ParamId,
    pub bh: ParamId,
}

impl GruParams {
    fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            wi: store.add(&format!("{prefix}.wi"), 3 * hidden, input, uniform(rng, 3 * hidden * input, input)),
            wh: store.add(&format!("{prefix}.wh"), 3 * hidden, hidden, uniform(rng, 3 * hidden * hidden, hidden)),
            bi: store.add(&format!("{prefix}.bi"), 1, 3 * hidden, vec![0.0; 3 * hidden]),
            bh: store.add(&format!("{prefix}.bh"), 1, 3 * hidden, vec![0.0; 3 * hidden]),
        }
    }

    fn bind(store: &ParamStore, prefix: &str) -> Option<Self> {
        Some(Self {
            wi: store.find(&format!("{prefix}.wi"))?,
            wh: store.find(&format!("{prefix}.wh"))?,
            bi: store.find(&format!("{prefix}.bi"))?,
            bh: store.find(&format!("{prefix}.bh"))?,
        })
    }

    fn run(&self, g: &mut Graph, store: &ParamStore, inputs: impl Iterator<Item = Var>, hidden: usize) -> Vec<Var> {
        let wi = g.param(store, self.wi);
        let wh = g.param(store, self.wh);
        let bi = g.param(store, self.bi);
        let bh = g.param(store, self.bh);
        let mut h = g.leaf(vec![0.0; hidden]);
        inputs
            .map(|x| {
                h = g.gru_cell(x, h, wi, wh, bi, bh);
                h
            })
            .collect()
    }
}

/// Bidirectional GRU; the output at step `i` is `[forward_i, backward_i]`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub hidden: usize,
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fwd = GruParams::new(store, &format!("{prefix}.fwd"), input, hidden, rng);
        let bwd = GruParams::new(store, &format!("{prefix}.bwd"), input, hidden, rng);
        Self { hidden, fwd, bwd }
    }

    pub fn bind(store: &ParamStore, prefix: &str, hidden: usize) -> Option<Self> {
        Some(Self { hidden, fwd: GruParams::bind(store, &format!("{prefix}.fwd"))?, bwd: GruParams::bind(store, &format!("{prefix}.bwd"))? })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Vec<Var> {
        let f = self.fwd.run(g, store, inputs.iter().copied(), self.hidden);
        let mut b = self.bwd.run(g, store, inputs.iter().rev().copied(), self.hidden);
        b.reverse();
        f.iter().zip(&b).map(|(x, y)| g.concat(&[*x, *y])).collect()
    }
}

/// Plain GRU cell, used by tests as an independent reference.
pub fn gru_cell_plain(x: &[f64], h: &[f64], wi: &[f64], wh: &[f64], bi: &[f64], bh: &[f64]) -> Vec<f64> {
    let hs = h.len();
    let gi = mat_vec(wi, x, bi);
    let gh = mat_vec(wh, h, bh);
    (0..hs)
        .map(|j| {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hs + j] + gh[hs + j]);
            let n = (gi[2 * hs + j] + r * gh[2 * hs + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}
