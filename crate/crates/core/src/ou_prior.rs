//! Closed-form Ornstein–Uhlenbeck prior.
//!
//! The prior has drift `-½ν²z` and diffusion `ν` per latent dimension, which
//! makes `N(0, 1)` its stationary marginal. All densities are in nats.

use crate::error::{domain, Result};
use std::f64::consts::PI;

/// Dimensions whose diffusion falls at or below this value are treated as
/// time-constant ("global") and pruned to their initial value.
pub const GLOBAL_NU_THRESHOLD: f64 = 1e-3;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct OuParams {
    pub nu: Vec<f64>,
}

impl OuParams {
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        if let Some(bad) = nu.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return domain(format!("diffusion must be finite and non-negative, got {bad}"));
        }
        Ok(Self { nu })
    }

    pub fn dims(&self) -> usize {
        self.nu.len()
    }

    pub fn is_global(&self, dim: usize, threshold: f64) -> bool {
        self.nu[dim] <= threshold
    }

    /// Splits dimension indices into (global, local) at `threshold`.
    pub fn classify(&self, threshold: f64) -> (Vec<usize>, Vec<usize>) {
        (0..self.dims()).partition(|&d| self.is_global(d, threshold))
    }
}

/// Mean multiplier and variance of the transition `z(t+dt) | z(t)`.
pub fn transition_params(nu: f64, dt: f64) -> Result<(f64, f64)> {
    if !nu.is_finite() || nu < 0.0 || !dt.is_finite() || dt < 0.0 {
        return domain(format!("transition requires finite nu >= 0 and dt >= 0 (nu={nu}, dt={dt})"));
    }
    let a = nu * nu * dt;
    Ok(((-0.5 * a).exp(), -(-a).exp_m1()))
}

/// Gaussian log-density that treats a zero variance as a point mass: the
/// log-density is 0 at the mean and `-inf` elsewhere.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if x == mean { 0.0 } else { f64::NEG_INFINITY };
    }
    let r = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var
}

/// Transition log-density of one dimension from `prev` to `next` over `dt`.
pub fn transition_logpdf(nu: f64, dt: f64, prev: f64, next: f64) -> Result<f64> {
    let (m, v) = transition_params(nu, dt)?;
    Ok(normal_logpdf(next, m * prev, v))
}

/// Joint log-density of a skeleton `values` (time-major, `params.dims()` per
/// time) observed at strictly increasing `times`.
pub fn joint_log_density(params: &OuParams, times: &[f64], values: &[f64]) -> Result<f64> {
    let d = params.dims();
    if times.is_empty() || values.len() != times.len() * d {
        return domain("values must hold dims() entries per time");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("times must be strictly increasing");
    }
    let mut total = values[..d].iter().map(|&z| -HALF_LN_2PI - 0.5 * z * z).sum::<f64>();
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        for (j, &nu) in params.nu.iter().enumerate() {
            total += transition_logpdf(nu, dt, values[(k - 1) * d + j], values[k * d + j])?;
        }
    }
    Ok(total)
}

/// Exact conditional mean of the OU bridge pinned at `left` and `right`.
pub fn bridge_mean(nu: f64, t: f64, left: (f64, f64), right: (f64, f64)) -> Result<f64> {
    let (t1, z1) = left;
    let (t2, z2) = right;
    if !(t1 < t2) || !(t > t1 && t < t2) {
        return domain(format!("bridge time {t} must lie strictly inside ({t1}, {t2})"));
    }
    if !nu.is_finite() || nu < 0.0 {
        return domain(format!("invalid diffusion {nu}"));
    }
    let theta = 0.5 * nu * nu;
    let span = t2 - t1;
    if theta * span < 1e-9 {
        let w = (t - t1) / span;
        return Ok((1.0 - w) * z1 + w * z2);
    }
    Ok(z1 * sinh_ratio(theta * (t2 - t), theta * span) + z2 * sinh_ratio(theta * (t - t1), theta * span))
}

// sinh(a) / sinh(b) for 0 <= a <= b without overflow.
fn sinh_ratio(a: f64, b: f64) -> f64 {
    (a - b).exp() * (-(-2.0 * a).exp_m1()) / (-(-2.0 * b).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar_pdf(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
    }

    #[test]
    fn zero_diffusion_freezes_state() {
        assert_eq!(transition_params(0.0, 5.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn long_horizon_relaxes_to_stationary() {
        let (m, v) = transition_params(1.0, 1e3).unwrap();
        assert!(m < 1e-100);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_transition_values() {
        // exp(-1/2) and 1 - exp(-1) to 15 digits.
        let (m, v) = transition_params(1.0, 1.0).unwrap();
        assert!((m - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((v - 0.632_120_558_828_557_7).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(transition_params(-1.0, 1.0).is_err());
        assert!(transition_params(1.0, f64::NAN).is_err());
        assert!(OuParams::new(vec![0.1, f64::INFINITY]).is_err());
    }

    #[test]
    fn single_point_density() {
        let p = OuParams::new(vec![0.7]).unwrap();
        let lp = joint_log_density(&p, &[0.0], &[0.0]).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_transition_collapses() {
        let p = OuParams::new(vec![0.0]).unwrap();
        let lp = joint_log_density(&p, &[0.0, 1.0], &[0.4, 0.4]).unwrap();
        assert!((lp - (-HALF_LN_2PI - 0.08)).abs() < 1e-12);
        let off = joint_log_density(&p, &[0.0, 1.0], &[0.4, 0.5]).unwrap();
        assert_eq!(off, f64::NEG_INFINITY);
    }

    #[test]
    fn joint_matches_scalar_product() {
        let p = OuParams::new(vec![1.0]).unwrap();
        let lp = joint_log_density(&p, &[0.0, 1.0, 2.0], &[0.5, 0.3, -0.1]).unwrap();
        let m = (-0.5f64).exp();
        let v = 1.0 - (-1.0f64).exp();
        let oracle = scalar_pdf(0.5, 0.0, 1.0) * scalar_pdf(0.3, 0.5 * m, v) * scalar_pdf(-0.1, 0.3 * m, v);
        assert!((lp - oracle.ln()).abs() < 1e-10);
    }

    #[test]
    fn chapman_kolmogorov_and_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let nu = rng.random_range(0.01..3.0);
            let dt1 = rng.random_range(0.001..2.0);
            let dt2 = rng.random_range(0.001..2.0);
            let (m1, v1) = transition_params(nu, dt1).unwrap();
            let (m2, v2) = transition_params(nu, dt2).unwrap();
            let (m, v) = transition_params(nu, dt1 + dt2).unwrap();
            assert!(((m1 * m2) - m).abs() <= 1e-12 * m);
            assert!(((v2 + m2 * m2 * v1) - v).abs() <= 1e-12 * v);
            assert!((m * m + v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_point_density_integrates_to_one() {
        let p = OuParams::new(vec![0.8]).unwrap();
        let n = 801;
        let h = 16.0 / (n - 1) as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = -8.0 + i as f64 * h;
                let b = -8.0 + j as f64 * h;
                let w = simpson_w(i, n) * simpson_w(j, n);
                mass += w * joint_log_density(&p, &[0.0, 0.7], &[a, b]).unwrap().exp();
            }
        }
        mass *= h * h / 9.0;
        assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
    }

    fn simpson_w(i: usize, n: usize) -> f64 {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    }

    #[test]
    fn bridge_limits_and_shrinkage() {
        let lin = bridge_mean(0.0, 0.25, (0.0, 1.0), (1.0, 3.0)).unwrap();
        assert!((lin - 1.5).abs() < 1e-15);
        let mid = bridge_mean(1.5, 0.5, (0.0, 2.0), (1.0, 2.0)).unwrap();
        assert!(mid > 0.0 && mid < 2.0);
        let near = bridge_mean(1.0, 1e-9, (0.0, 0.7), (1.0, -0.3)).unwrap();
        assert!((near - 0.7).abs() < 1e-8);
        let near = bridge_mean(1.0, 1.0 - 1e-9, (0.0, 0.7), (1.0, -0.3)).unwrap();
        assert!((near + 0.3).abs() < 1e-8);
        assert!(bridge_mean(1.0, 1.5, (0.0, 0.0), (1.0, 0.0)).is_err());
    }

    #[test]
    fn bridge_monotone_in_endpoints() {
        let a = bridge_mean(1.2, 0.3, (0.0, 0.1), (1.0, 0.5)).unwrap();
        let b = bridge_mean(1.2, 0.3, (0.0, 0.2), (1.0, 0.5)).unwrap();
        let c = bridge_mean(1.2, 0.3, (0.0, 0.2), (1.0, 0.6)).unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn bridge_matches_monte_carlo() {
        // Exact midpoint draws from the left endpoint, importance-weighted by
        // the transition density into the right endpoint.
        let nu = 1.0;
        let (z1, z2) = (1.0, -1.0);
        let (m, v) = transition_params(nu, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..1_000_000 {
            let mid = m * z1 + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let w = scalar_pdf(z2, m * mid, v);
            num += w * mid;
            den += w;
        }
        let mc = num / den;
        let exact = bridge_mean(nu, 0.5, (0.0, z1), (1.0, z2)).unwrap();
        assert!((mc - exact).abs() < 5e-3, "mc {mc} exact {exact}");
    }
}
