//! Euler–Maruyama simulation over a fixed grid with reproducible Brownian
//! paths, and the Euler pseudo-likelihood of a sampled skeleton.

use crate::error::{domain, Error, Result};
use crate::nn::{Graph, Var};
use crate::ou_prior::{normal_logpdf, OuParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Union of a uniform base grid with extra times that must be hit exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub times: Vec<f64>,
    /// Position in `times` of every base point.
    base: Vec<usize>,
}

/// `frames · substeps + 1` uniform points on `[0, frames · frame_dt]`. Every
/// `substeps`-th point is the frame time `i · frame_dt` bit-for-bit.
pub fn frame_base(frame_dt: f64, frames: usize, substeps: usize) -> Vec<f64> {
    (0..=frames * substeps)
        .map(|j| {
            if j % substeps == 0 {
                (j / substeps) as f64 * frame_dt
            } else {
                j as f64 * frame_dt / substeps as f64
            }
        })
        .collect()
}

impl SolverGrid {
    pub fn new(base: Vec<f64>, extra: &[f64]) -> Result<Self> {
        if base.len() < 2 || base.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("base grid needs at least two increasing points");
        }
        let (lo, hi) = (base[0], base[base.len() - 1]);
        let mut extra: Vec<f64> = extra.to_vec();
        if extra.iter().any(|t| !(*t >= lo && *t <= hi)) {
            return domain("extra grid times must lie inside the base grid");
        }
        extra.sort_by(f64::total_cmp);
        extra.dedup();
        let mut times = Vec::with_capacity(base.len() + extra.len());
        let mut idx = Vec::with_capacity(base.len());
        let mut e = 0;
        for &b in &base {
            while e < extra.len() && extra[e] < b {
                times.push(extra[e]);
                e += 1;
            }
            if e < extra.len() && extra[e] == b {
                e += 1;
            }
            idx.push(times.len());
            times.push(b);
        }
        Ok(Self { times, base: idx })
    }

    pub fn uniform(t0: f64, t_end: f64, n_steps: usize, extra: &[f64]) -> Result<Self> {
        if !(t_end > t0) || n_steps == 0 {
            return domain("uniform grid needs t_end > t0 and at least one step");
        }
        let base = (0..=n_steps).map(|k| t0 + (t_end - t0) * k as f64 / n_steps as f64).collect();
        Self::new(base, extra)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid position of a time that was placed on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok()
    }
}

/// Brownian increments over a [`SolverGrid`].
///
/// Base-step increments come from one stream per dimension; points inserted
/// between two base points are filled in by Brownian bridges drawn from a
/// stream keyed by the base step. The same seed and base grid therefore give
/// the same path however many points are inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dims: usize,
    pub grid: Vec<f64>,
    /// `(grid.len() − 1) × dims`, step-major.
    pub increments: Vec<f64>,
}

const BRIDGE_STREAM: u64 = 1 << 32;

impl BrownianPath {
    pub fn generate(seed: u64, grid: &SolverGrid, dims: usize) -> Self {
        let steps = grid.base.len() - 1;
        let mut base_inc = vec![0.0; steps * dims];
        for d in 0..dims {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            for k in 0..steps {
                let dt = grid.times[grid.base[k + 1]] - grid.times[grid.base[k]];
                let z: f64 = rng.sample(StandardNormal);
                base_inc[k * dims + d] = dt.sqrt() * z;
            }
        }
        let n = grid.times.len();
        let mut increments = vec![0.0; (n - 1) * dims];
        for k in 0..steps {
            let (i0, i1) = (grid.base[k], grid.base[k + 1]);
            if i1 == i0 + 1 {
                increments[i0 * dims..i1 * dims].copy_from_slice(&base_inc[k * dims..(k + 1) * dims]);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(BRIDGE_STREAM | k as u64);
            let b = grid.times[i1];
            for d in 0..dims {
                let total = base_inc[k * dims + d];
                let mut w = 0.0;
                for i in i0..i1 - 1 {
                    let (s0, s1) = (grid.times[i], grid.times[i + 1]);
                    let mean = w + (s1 - s0) / (b - s0) * (total - w);
                    let var = (s1 - s0) * (b - s1) / (b - s0);
                    let z: f64 = rng.sample(StandardNormal);
                    let next = mean + var.sqrt() * z;
                    increments[i * dims + d] = next - w;
                    w = next;
                }
                increments[(i1 - 1) * dims + d] = total - w;
            }
        }
        Self { seed, dims, grid: grid.times.clone(), increments }
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dims..(step + 1) * self.dims]
    }

    /// Sums every `factor` consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Self {
        assert!(factor >= 1 && self.steps() % factor == 0);
        let steps = self.steps() / factor;
        let grid = (0..=steps).map(|k| self.grid[k * factor]).collect();
        let mut increments = vec![0.0; steps * self.dims];
        for k in 0..steps {
            for j in 0..factor {
                for d in 0..self.dims {
                    increments[k * self.dims + d] += self.increments[(k * factor + j) * self.dims + d];
                }
            }
        }
        Self { seed: self.seed, dims: self.dims, grid, increments }
    }
}

/// A simulated latent trajectory, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub times: Vec<f64>,
    pub dims: usize,
    pub values: Vec<f64>,
}

impl LatentPath {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dims..(k + 1) * self.dims]
    }

    /// Piecewise-linear evaluation between grid points, clamped outside.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.at(0).to_vec();
        }
        if t >= self.times[n - 1] {
            return self.at(n - 1).to_vec();
        }
        let k = self.times.partition_point(|x| *x <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.at(k).iter().zip(self.at(k + 1)).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    }
}

/// `z_{k+1} = z_k + Δt_k · drift(z_k, t_k) + ν ⊙ ΔW_k` on the path's grid.
pub fn euler_solve<F>(z0: &[f64], mut drift: F, nu: &OuParams, path: &BrownianPath) -> Result<LatentPath>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    let dims = z0.len();
    if dims != path.dims || nu.dims() != dims {
        return domain("z0, diffusion and Brownian path dimensions differ");
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return domain("initial state must be finite");
    }
    let mut values = Vec::with_capacity(path.grid.len() * dims);
    values.extend_from_slice(z0);
    for k in 0..path.steps() {
        let t = path.grid[k];
        let dt = path.grid[k + 1] - t;
        let z = &values[k * dims..(k + 1) * dims];
        let f = drift(z, t);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation { time: t });
        }
        let dw = path.increment(k);
        let next: Vec<f64> = (0..dims).map(|d| z[d] + dt * f[d] + nu.nu[d] * dw[d]).collect();
        values.extend(next);
    }
    Ok(LatentPath { times: path.grid.clone(), dims, values })
}

/// Differentiable Euler solve; `drift(g, z, step)` builds the drift node.
/// Returns the state node at every grid point.
pub fn euler_solve_graph<F>(g: &mut Graph, z0: Var, nu: Var, path: &BrownianPath, mut drift: F) -> Result<Vec<Var>>
where
    F: FnMut(&mut Graph, Var, usize) -> Var,
{
    let mut states = Vec::with_capacity(path.grid.len());
    states.push(z0);
    let mut z = z0;
    for k in 0..path.steps() {
        let f = drift(g, z, k);
        if g.value(f).iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation { time: path.grid[k] });
        }
        let dt = path.grid[k + 1] - path.grid[k];
        z = g.euler_step(z, f, nu, path.increment(k).to_vec(), dt);
        states.push(z);
    }
    Ok(states)
}

/// `q0_logpdf + Σ_i log N(z_i; z_{i−1} + Δt_i·drift(z_{i−1}, t_{i−1}), Δt_i·ν²)`.
pub fn pseudo_log_likelihood<F>(mut drift: F, nu: &OuParams, times: &[f64], values: &[f64], q0_logpdf: f64) -> Result<f64>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    let d = nu.dims();
    if times.is_empty() || values.len() != times.len() * d {
        return domain("values must hold one state per time");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("times must be strictly increasing");
    }
    let mut total = q0_logpdf;
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let prev = &values[(k - 1) * d..k * d];
        let f = drift(prev, times[k - 1]);
        for j in 0..d {
            let var = dt * nu.nu[j] * nu.nu[j];
            total += normal_logpdf(values[k * d + j], prev[j] + dt * f[j], var);
        }
    }
    Ok(total)
}

/// Prior drift `−½ν²z`.
pub fn prior_drift(nu: &OuParams) -> impl Fn(&[f64], f64) -> Vec<f64> + '_ {
    move |z, _| z.iter().zip(&nu.nu).map(|(z, n)| -0.5 * n * n * z).collect()
}
