//! Scalar helpers shared by the densities, the autodiff ops and the coders.

use statrs::function::erf;

pub const LN_2: f64 = std::f64::consts::LN_2;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse softplus `log(e^x - 1)` for `x > 0`.
pub fn inv_softplus(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `log(σ(a) − σ(b))` for `a > b`, stable in both tails.
pub fn log_sigmoid_diff(a: f64, b: f64) -> f64 {
    if !(a > b) {
        return f64::NEG_INFINITY;
    }
    log_sigmoid(a) + log_sigmoid(-b) + (-(b - a).exp_m1()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Newton step against the tail-accurate CDF
    let err = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    let pdf = norm_pdf(x);
    if pdf > 0.0 && err.is_finite() {
        x - err / pdf
    } else {
        x
    }
}

/// `Φ(b) − Φ(a)` computed in whichever tail keeps precision.
pub fn norm_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse_pair() {
        for &x in &[1e-8, 0.3, 1.0, 5.0, 40.0, 200.0] {
            assert!((softplus(inv_softplus(x)) - x).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn sigmoid_diff_matches_direct() {
        for &(a, b) in &[(0.5, -0.5), (3.0, 2.9), (-20.0, -21.0), (30.0, 1.0)] {
            let direct = (sigmoid(a) - sigmoid(b)).ln();
            assert!((log_sigmoid_diff(a, b) - direct).abs() < 1e-10);
        }
        // deep tail where the direct difference underflows to 0
        assert!(log_sigmoid_diff(60.0, 59.0).is_finite());
    }

    #[test]
    fn normal_helpers() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_ppf(norm_cdf(1.3)) - 1.3).abs() < 1e-12);
        let v = norm_interval(-1.0, 1.0);
        assert!((v - 0.682_689_492_137_085_9).abs() < 1e-14, "{v}");
        assert!(norm_interval(8.0, 9.0) > 0.0);
    }
}
