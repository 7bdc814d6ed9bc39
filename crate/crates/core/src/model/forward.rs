//! Forward pass: encoder, posterior path, reconstruction, rates, objective.

use super::{Model, ObsKind, ReconKind};
use crate::error::{Error, Result};
use crate::interp::{linear_terms, CubicBasis, Spline, SplineKind};
use crate::nn::graph::{byte_to_unit, disc_mix_pmf};
use crate::nn::{Graph, Var};
use crate::numerics::softplus;
use crate::ou_prior::{joint_log_density, normal_logpdf, OuParams};
use crate::sde_sim::{euler_solve_graph, frame_base, BrownianPath, SolverGrid};
use crate::tpp::{prior_logp, sample_posterior, DiscretizationSet, SoftplusLogistic, SCALE_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Knots at every frame; the point process is not used.
    Full,
    /// Knots drawn from the posterior point process.
    Variational,
}

#[derive(Debug, Clone, Copy)]
pub enum TimesSource<'a> {
    AllFrames,
    Sample,
    Given(&'a [f64]),
}

/// Encoder output: knot values of the hidden-state spline and their second
/// derivatives, stacked as a `2n × 2H` matrix.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub stack: Var,
    values: Vec<f64>,
    cols: usize,
}

/// Per-sequence loss breakdown in nats.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub recon: f64,
    pub latent_rate: f64,
    pub times_rate: f64,
    pub points: usize,
    /// Coded latent values per the knot count.
    pub coded_values: usize,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.recon + self.latent_rate + self.times_rate
    }
}

/// Posterior path nodes on the solver grid.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub grid: SolverGrid,
    pub states: Vec<Var>,
    pub z0: Var,
    pub logq0: Var,
    pub log_nu: Var,
}

/// A differentiable per-sequence objective.
#[derive(Debug)]
pub struct SequenceObjective {
    pub graph: Graph,
    /// Reconstruction plus latent rate.
    pub loss: Var,
    /// Posterior log-density of the sampled times, when they were sampled.
    pub logq: Option<Var>,
    pub components: Components,
    pub times: Vec<f64>,
    /// Raw decoder outputs at every frame.
    pub decoded: Vec<f64>,
}

/// Plain (tape-free) result of running the posterior for coding.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub knots: Vec<f64>,
    /// `knots.len() × latent_dim`, time-major.
    pub values: Vec<f64>,
}

impl Encoded {
    /// Hidden state at `t` without recording on the tape.
    pub fn h_value(&self, model: &Model, t: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for (r, c) in model.h_terms(t) {
            for (o, x) in y.iter_mut().zip(&self.values[r * self.cols..(r + 1) * self.cols]) {
                *o += c * x;
            }
        }
        y
    }

    pub fn h_var(&self, g: &mut Graph, model: &Model, t: f64) -> Var {
        g.row_combo(self.stack, model.h_terms(t))
    }
}

impl Model {
    fn h_terms(&self, t: f64) -> Vec<(usize, f64)> {
        let n = self.basis.len();
        let c = self.basis.terms(t);
        vec![(c.k, c.a), (c.k + 1, c.b), (n + c.k, c.c), (n + c.k + 1, c.d)]
    }

    fn input_frame(&self, x: &[f64], i: usize) -> Vec<f64> {
        let c = self.config.channels;
        let f = &x[i * c..(i + 1) * c];
        match self.config.obs {
            ObsKind::Gaussian => f.to_vec(),
            ObsKind::Logistic => f.iter().map(|v| byte_to_unit(to_byte(*v))).collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        let c = &self.config;
        if x.len() != c.frames * c.channels {
            return Err(Error::Domain(format!("sequence has {} values, expected {} frames × {} channels", x.len(), c.frames, c.channels)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("sequence contains non-finite values".into()));
        }
        if c.obs == ObsKind::Logistic && x.iter().any(|v| *v < 0.0 || *v > 255.0 || v.fract() != 0.0) {
            return Err(Error::Domain("lossless models take integer values in 0..=255".into()));
        }
        Ok(())
    }

    /// Embeds every frame, runs the bidirectional GRU and fits the cubic
    /// hidden-state spline through its outputs.
    pub fn encode(&self, g: &mut Graph, x: &[f64]) -> Result<Encoded> {
        self.check_input(x)?;
        let inputs: Vec<Var> = (0..self.config.frames)
            .map(|i| {
                let f = g.leaf(self.input_frame(x, i));
                self.nets.embed.forward(g, &self.store, f)
            })
            .collect();
        let outs = self.nets.gru.forward(g, &self.store, &inputs);
        let y = g.stack(&outs);
        let m = g.const_matmul(Arc::clone(&self.basis_op), y);
        let stack = g.vstack(y, m);
        let values = g.value(stack).to_vec();
        Ok(Encoded { stack, values, cols: 2 * self.config.hidden })
    }

    fn tpp_input(&self, enc: &Encoded, cursor: f64) -> Vec<f64> {
        let c = &self.config;
        let mut v = enc.h_value(self, cursor);
        v.push(cursor / c.t_end());
        v.push((c.t_end() - cursor) / c.t_max);
        v
    }

    /// Gap distribution of the posterior point process at `cursor`.
    pub fn gap_dist(&self, enc: &Encoded, cursor: f64) -> SoftplusLogistic {
        let out = self.nets.tpp.forward_plain(&self.store, &self.tpp_input(enc, cursor));
        SoftplusLogistic::new(out[0], softplus(out[1]) + SCALE_FLOOR, self.config.t_max)
    }

    /// Posterior log-density of `times` on the tape. Hidden states enter as
    /// constants so only the point-process network receives gradients.
    pub fn logq_graph(&self, g: &mut Graph, enc: &Encoded, times: &[f64]) -> Var {
        let t_end = self.config.t_end();
        let t_max = self.config.t_max;
        let mut terms = Vec::with_capacity(times.len() + 1);
        let mut cursor = 0.0;
        let params = |g: &mut Graph, cursor: f64| {
            let inp = g.leaf(self.tpp_input(enc, cursor));
            let out = self.nets.tpp.forward(g, &self.store, inp);
            let mu = g.slice(out, 0, 1);
            let raw = g.slice(out, 1, 1);
            let sp = g.softplus(raw);
            (mu, g.offset(sp, SCALE_FLOOR))
        };
        for &t in times {
            let (mu, s) = params(g, cursor);
            terms.push(g.sl_trunc_logpdf(t - cursor, mu, s, t_max));
            cursor = t;
        }
        let (mu, s) = params(g, cursor);
        terms.push(g.sl_log_survival(t_end - cursor, mu, s, t_max));
        g.add_all(&terms)
    }

    /// Samples the initial state and integrates the posterior SDE on the
    /// frame grid refined by `times`. Dimensions flagged in `pruned` keep
    /// their initial value.
    pub fn posterior(&self, g: &mut Graph, enc: &Encoded, times: &[f64], eps: &[f64], bm_seed: u64, pruned: Option<&[bool]>) -> Result<Posterior> {
        let c = &self.config;
        let d = c.latent_dim;
        let h0 = enc.h_var(g, self, 0.0);
        let head = self.nets.z0.forward(g, &self.store, h0);
        let mean = g.slice(head, 0, d);
        let raw = g.slice(head, d, d);
        let std = g.softplus(raw);
        let noise = g.leaf(eps.to_vec());
        let scaled = g.mul(std, noise);
        let z0 = g.add(mean, scaled);
        let logq0 = g.normal_logp(z0, mean, std);
        let log_nu = g.param(&self.store, self.nets.log_nu);
        let mut nu = g.exp(log_nu);
        let mask = pruned.map(|p| g.leaf(p.iter().map(|&x| if x { 0.0 } else { 1.0 }).collect()));
        if let Some(m) = mask {
            nu = g.mul(nu, m);
        }
        let grid = SolverGrid::new(frame_base(c.frame_dt, c.frames, c.substeps), times)?;
        let path = BrownianPath::generate(bm_seed, &grid, d);
        let states = euler_solve_graph(g, z0, nu, &path, |g, z, k| {
            let h = enc.h_var(g, self, path.grid[k]);
            let inp = g.concat(&[z, h]);
            let f = self.nets.drift.forward(g, &self.store, inp);
            match mask {
                Some(m) => g.mul(f, m),
                None => f,
            }
        })?;
        Ok(Posterior { grid, states, z0, logq0, log_nu })
    }

    fn knot_states(&self, post: &Posterior, knots: &[f64]) -> Vec<Var> {
        knots
            .iter()
            .map(|&t| post.states[post.grid.index_of(t).expect("knot times lie on the solver grid")])
            .collect()
    }

    /// Reconstructed latent at each query time, on the tape.
    fn zhat_graph(&self, g: &mut Graph, knots: &[f64], states: &[Var], query: &[f64]) -> Result<Vec<Var>> {
        match self.config.recon {
            ReconKind::Linear => Ok(query
                .iter()
                .map(|&t| {
                    let (k, w) = linear_terms(knots, t);
                    let a = g.scale(states[k], 1.0 - w);
                    let b = g.scale(states[k + 1], w);
                    g.add(a, b)
                })
                .collect()),
            ReconKind::Cubic => {
                let basis = CubicBasis::new(knots)?;
                let n = knots.len();
                let z = g.stack(states);
                let m = g.const_matmul(Arc::new(basis.second_op.clone()), z);
                let st = g.vstack(z, m);
                Ok(query
                    .iter()
                    .map(|&t| {
                        let c = basis.terms(t);
                        g.row_combo(st, vec![(c.k, c.a), (c.k + 1, c.b), (n + c.k, c.c), (n + c.k + 1, c.d)])
                    })
                    .collect())
            }
        }
    }

    fn recon_nll(&self, g: &mut Graph, pred: Var, x: &[f64], i: usize) -> Var {
        let c = &self.config;
        let target = &x[i * c.channels..(i + 1) * c.channels];
        match c.obs {
            ObsKind::Gaussian => g.gaussian_nll(pred, target.to_vec(), c.sigma_obs),
            ObsKind::Logistic => g.disc_mix_nll(pred, target.iter().map(|v| to_byte(*v)).collect(), c.mixture),
        }
    }

    /// `−log p` of the knot skeleton under the OU prior.
    fn prior_nll_graph(&self, g: &mut Graph, knots: &[f64], states: &[Var], log_nu: Var) -> Var {
        let d = self.config.latent_dim;
        let zeros = g.leaf(vec![0.0; d]);
        let ones = g.leaf(vec![1.0; d]);
        let mut terms = vec![g.normal_logp(states[0], zeros, ones)];
        for k in 1..knots.len() {
            terms.push(g.ou_transition(states[k - 1], states[k], log_nu, knots[k] - knots[k - 1]));
        }
        let lp = g.add_all(&terms);
        g.scale(lp, -1.0)
    }

    /// Euler pseudo-likelihood of the knot skeleton under the posterior.
    fn posterior_ll_graph(&self, g: &mut Graph, enc: &Encoded, knots: &[f64], states: &[Var], post: &Posterior) -> Var {
        let mut terms = vec![post.logq0];
        for k in 1..knots.len() {
            let h = enc.h_var(g, self, knots[k - 1]);
            let inp = g.concat(&[states[k - 1], h]);
            let f = self.nets.drift.forward(g, &self.store, inp);
            terms.push(g.euler_transition(states[k - 1], states[k], f, post.log_nu, knots[k] - knots[k - 1]));
        }
        g.add_all(&terms)
    }

    /// Draws the standard-normal initial noise and the Brownian seed.
    pub fn sequence_noise(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, u64) {
        let eps = (0..self.config.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        (eps, rng.random())
    }

    /// Builds the per-sequence objective. All randomness derives from `seed`.
    pub fn objective(&self, x: &[f64], stage: Stage, times: TimesSource, seed: u64) -> Result<SequenceObjective> {
        let c = &self.config;
        let t_end = c.t_end();
        let mut g = Graph::new();
        let enc = self.encode(&mut g, x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (eps, bm_seed) = self.sequence_noise(&mut rng);
        let frames = c.frame_times();
        let set: Vec<f64> = match (stage, times) {
            (_, TimesSource::Given(t)) => t.to_vec(),
            (Stage::Full, _) | (_, TimesSource::AllFrames) => frames[..c.frames - 1].to_vec(),
            (Stage::Variational, TimesSource::Sample) => {
                sample_posterior(&|cur: f64| self.gap_dist(&enc, cur), t_end, c.lambda(), &mut rng).times
            }
        };
        crate::tpp::check_times(&set, t_end)?;
        let logq = (stage == Stage::Variational).then(|| self.logq_graph(&mut g, &enc, &set));
        let post = self.posterior(&mut g, &enc, &set, &eps, bm_seed, None)?;
        let knots = DiscretizationSet { times: set.clone(), log_q: 0.0, log_p: 0.0 }.knots(t_end);
        let ks = self.knot_states(&post, &knots);
        let zhat = self.zhat_graph(&mut g, &knots, &ks, &frames)?;
        let preds: Vec<Var> = zhat.iter().map(|z| self.nets.decoder.forward(&mut g, &self.store, *z)).collect();
        let decoded = preds.iter().flat_map(|p| g.value(*p).to_vec()).collect();
        let nll: Vec<Var> = preds.iter().enumerate().map(|(i, p)| self.recon_nll(&mut g, *p, x, i)).collect();
        let recon = g.add_all(&nll);
        let prior_nll = self.prior_nll_graph(&mut g, &knots, &ks, post.log_nu);
        let rate = match c.obs {
            ObsKind::Gaussian => prior_nll,
            ObsKind::Logistic => {
                let lq = self.posterior_ll_graph(&mut g, &enc, &knots, &ks, &post);
                g.add(lq, prior_nll)
            }
        };
        let loss = g.add(recon, rate);
        let times_rate = match logq {
            Some(v) => g.scalar(v) - prior_logp(c.lambda(), t_end, set.len()),
            None => 0.0,
        };
        let components = Components {
            recon: g.scalar(recon),
            latent_rate: g.scalar(rate),
            times_rate,
            points: set.len(),
            coded_values: knots.len() * c.latent_dim,
        };
        Ok(SequenceObjective { graph: g, loss, logq, components, times: set, decoded })
    }

    /// Knot values of the posterior path for a fixed time set, computed with
    /// the same arithmetic as training.
    pub fn infer(&self, enc: &Encoded, g: &mut Graph, times: &[f64], eps: &[f64], bm_seed: u64, pruned: Option<&[bool]>) -> Result<Inference> {
        let post = self.posterior(g, enc, times, eps, bm_seed, pruned)?;
        let knots = DiscretizationSet { times: times.to_vec(), log_q: 0.0, log_p: 0.0 }.knots(self.config.t_end());
        let values = self.knot_states(&post, &knots).iter().flat_map(|v| g.value(*v).to_vec()).collect();
        Ok(Inference { knots, values })
    }

    /// Reconstructed latents at `query` from a knot skeleton.
    pub fn zhat(&self, knots: &[f64], values: &[f64], query: &[f64]) -> Result<Vec<f64>> {
        let kind = match self.config.recon {
            ReconKind::Linear => SplineKind::Linear,
            ReconKind::Cubic => SplineKind::Cubic,
        };
        let s = Spline::fit(kind, knots, values, self.config.latent_dim)?;
        Ok(query.iter().flat_map(|&t| s.eval(t)).collect())
    }

    /// Mean and standard deviation of the initial-state posterior.
    pub fn z0_params(&self, enc: &Encoded) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.latent_dim;
        let out = self.nets.z0.forward_plain(&self.store, &enc.h_value(self, 0.0));
        (out[..d].to_vec(), out[d..].iter().map(|v| softplus(*v)).collect())
    }

    /// Posterior drift at state `z` and time `t`.
    pub fn drift_value(&self, enc: &Encoded, z: &[f64], t: f64) -> Vec<f64> {
        let mut inp = z.to_vec();
        inp.extend(enc.h_value(self, t));
        self.nets.drift.forward_plain(&self.store, &inp)
    }

    /// Raw decoder outputs for one latent vector.
    pub fn decoder_output(&self, z: &[f64]) -> Vec<f64> {
        self.nets.decoder.forward_plain(&self.store, z)
    }

    /// Point prediction in model units: the Gaussian mean, or the mixture
    /// mean on the 0..=255 scale.
    pub fn predict(&self, z: &[f64]) -> Vec<f64> {
        let out = self.decoder_output(z);
        match self.config.obs {
            ObsKind::Gaussian => out,
            ObsKind::Logistic => {
                let k = self.config.mixture;
                out.chunks(3 * k).map(|p| disc_mix_pmf(p, k).iter().enumerate().map(|(v, pr)| v as f64 * pr).sum()).collect()
            }
        }
    }

    /// Decodes a knot skeleton at arbitrary times; `frames × channels`.
    pub fn reconstruct(&self, knots: &[f64], values: &[f64], query: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.latent_dim;
        let z = self.zhat(knots, values, query)?;
        Ok(z.chunks(d).flat_map(|zi| self.predict(zi)).collect())
    }
}

/// `−log p` of a knot skeleton under the OU prior; globally flagged
/// dimensions contribute only their initial value.
pub fn lossy_rate_nats(nu: &[f64], knots: &[f64], values: &[f64], pruned: &[bool]) -> Result<f64> {
    let d = nu.len();
    let mut total = 0.0;
    for j in 0..d {
        let col: Vec<f64> = values.iter().skip(j).step_by(d).copied().collect();
        total += if pruned[j] {
            normal_logpdf(col[0], 0.0, 1.0)
        } else {
            joint_log_density(&OuParams::new(vec![nu[j]])?, knots, &col)?
        };
    }
    Ok(-total)
}

pub(crate) fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
