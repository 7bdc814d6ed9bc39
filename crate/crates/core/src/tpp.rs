//! Latent temporal point process over discretization times.
//!
//! The posterior is autoregressive over inter-event gaps: at each cursor a
//! gap distribution is produced, a gap is drawn, and the process stops when a
//! gap overshoots the end of the interval. The final overshoot contributes a
//! survival term instead of a point. The prior is a homogeneous Poisson
//! process with intensity `λ`.

use crate::error::{domain, Result};
use crate::numerics::{inv_softplus, log_sigmoid, log_sigmoid_diff, logit, sigmoid, softplus, LN_2};
use rand::Rng;

/// Default truncation of the inter-event gap.
pub const DEFAULT_T_MAX: f64 = 1.0;

/// Floor added to the softplus of the raw scale output.
pub const SCALE_FLOOR: f64 = 1e-3;

/// A distribution over positive gaps.
pub trait GapDistribution {
    fn logpdf(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    /// `log P(gap > r)`.
    fn log_survival(&self, r: f64) -> f64;
    /// Inverse-CDF draw from a uniform `u ∈ (0, 1)`.
    fn sample_uniform(&self, u: f64) -> f64;
    /// Upper end of the support (may be infinite).
    fn support_max(&self) -> f64;
}

/// Softplus-transformed logistic, optionally truncated to `(0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftplusLogistic {
    pub mu: f64,
    pub s: f64,
    pub t_max: f64,
}

impl SoftplusLogistic {
    pub fn new(mu: f64, s: f64, t_max: f64) -> Self {
        debug_assert!(s > 0.0 && t_max > 0.0);
        Self { mu, s, t_max }
    }

    pub fn untruncated(mu: f64, s: f64) -> Self {
        Self::new(mu, s, f64::INFINITY)
    }

    fn z(&self, x: f64) -> f64 {
        (inv_softplus(x) - self.mu) / self.s
    }

    /// Log-density of the untruncated distribution.
    pub fn logpdf_untruncated(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let u = self.z(x);
        let log_logistic = -u - self.s.ln() - 2.0 * softplus(-u);
        // σ(g(x)) = 1 − e^{−x}
        log_logistic - (-(-x).exp_m1()).ln()
    }

    pub fn cdf_untruncated(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        sigmoid(self.z(x))
    }

    /// `log F(t_max)`, 0 when untruncated.
    pub fn log_mass(&self) -> f64 {
        if self.t_max.is_infinite() {
            0.0
        } else {
            log_sigmoid(self.z(self.t_max))
        }
    }
}

impl GapDistribution for SoftplusLogistic {
    fn logpdf(&self, x: f64) -> f64 {
        if x > self.t_max {
            return f64::NEG_INFINITY;
        }
        self.logpdf_untruncated(x) - self.log_mass()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x >= self.t_max {
            return 1.0;
        }
        (self.cdf_untruncated(x).ln() - self.log_mass()).exp()
    }

    fn log_survival(&self, r: f64) -> f64 {
        if !(r > 0.0) {
            return 0.0;
        }
        if r >= self.t_max {
            return f64::NEG_INFINITY;
        }
        let ur = self.z(r);
        if self.t_max.is_infinite() {
            log_sigmoid(-ur)
        } else {
            log_sigmoid_diff(self.z(self.t_max), ur) - self.log_mass()
        }
    }

    fn sample_uniform(&self, u: f64) -> f64 {
        let scaled = u * self.log_mass().exp();
        softplus(self.mu + self.s * logit(scaled)).min(self.t_max)
    }

    fn support_max(&self) -> f64 {
        self.t_max
    }
}

/// Exponential gaps, i.e. the inter-event law of a Poisson process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential {
    pub rate: f64,
}

impl GapDistribution for Exponential {
    fn logpdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            f64::NEG_INFINITY
        } else {
            self.rate.ln() - self.rate * x
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.rate * x).exp_m1()
        }
    }

    fn log_survival(&self, r: f64) -> f64 {
        -self.rate * r.max(0.0)
    }

    fn sample_uniform(&self, u: f64) -> f64 {
        -(-u).ln_1p() / self.rate
    }

    fn support_max(&self) -> f64 {
        f64::INFINITY
    }
}

/// Produces the gap distribution at a cursor position.
pub trait GapModel {
    type Dist: GapDistribution;
    fn gap_at(&self, cursor: f64) -> Self::Dist;
}

impl<F, D> GapModel for F
where
    F: Fn(f64) -> D,
    D: GapDistribution,
{
    type Dist = D;
    fn gap_at(&self, cursor: f64) -> D {
        self(cursor)
    }
}

/// A sampled set of discretization times with its posterior and prior
/// log-densities (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationSet {
    pub times: Vec<f64>,
    pub log_q: f64,
    pub log_p: f64,
}

impl DiscretizationSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Knot times `0, t̂₁, …, t̂_M, t_end`.
    pub fn knots(&self, t_end: f64) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.times.len() + 2);
        k.push(0.0);
        k.extend_from_slice(&self.times);
        k.push(t_end);
        k
    }
}

/// Poisson-process prior log-density of a set with `count` points.
pub fn prior_logp(lambda: f64, t_end: f64, count: usize) -> f64 {
    count as f64 * lambda.ln() - t_end * lambda
}

/// Draws a set from the autoregressive posterior.
pub fn sample_posterior<M: GapModel, R: Rng + ?Sized>(model: &M, t_end: f64, lambda: f64, rng: &mut R) -> DiscretizationSet {
    let mut times = Vec::new();
    let mut log_q = 0.0;
    let mut cursor = 0.0;
    loop {
        let dist = model.gap_at(cursor);
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let gap = dist.sample_uniform(u);
        let next = cursor + gap;
        if next >= t_end {
            let remaining = t_end - cursor;
            if remaining < dist.support_max() {
                log_q += dist.log_survival(remaining);
                break;
            }
            // Survival has zero mass here; only a draw of exactly t_max can
            // land on t_end, so draw again.
            continue;
        }
        if next <= cursor {
            continue;
        }
        log_q += dist.logpdf(gap);
        times.push(next);
        cursor = next;
    }
    let log_p = prior_logp(lambda, t_end, times.len());
    DiscretizationSet { times, log_q, log_p }
}

/// Posterior log-density of exactly these times; `-inf` for invalid sets.
pub fn logq<M: GapModel>(times: &[f64], model: &M, t_end: f64) -> f64 {
    let mut cursor = 0.0;
    let mut total = 0.0;
    for &t in times {
        if !(t > cursor) || !(t < t_end) {
            return f64::NEG_INFINITY;
        }
        total += model.gap_at(cursor).logpdf(t - cursor);
        cursor = t;
    }
    total + model.gap_at(cursor).log_survival(t_end - cursor)
}

/// Validates a set of times against `(0, t_end)` and strict ordering.
pub fn check_times(times: &[f64], t_end: f64) -> Result<()> {
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev && t < t_end) {
            return domain(format!("discretization time {t} violates 0 < t1 < ... < t_end = {t_end}"));
        }
        prev = t;
    }
    Ok(())
}

/// Per-sample KL estimate `(log q − log p) / ln 2` for the time set.
pub fn times_rate_bits(log_q: f64, lambda: f64, t_end: f64, count: usize) -> f64 {
    (log_q - prior_logp(lambda, t_end, count)) / LN_2
}

/// Closed-form KL between two homogeneous Poisson processes on `[0, t_end]`.
pub fn poisson_kl_nats(rate_q: f64, rate_p: f64, t_end: f64) -> f64 {
    t_end * (rate_q * (rate_q / rate_p).ln() - rate_q + rate_p)
}
