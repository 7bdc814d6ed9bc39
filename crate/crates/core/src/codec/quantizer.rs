//! Maximum-entropy scalar quantizer for standard-normal latents.

use super::ans::FreqTable;
use crate::error::{domain, Result};
use crate::numerics::{norm_interval, norm_pdf, norm_ppf};

/// `precision` bins of equal mass under `N(0, 1)`, reconstructed at the bin's
/// conditional mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    precision: usize,
    edges: Vec<f64>,
    recon: Vec<f64>,
}

impl Quantizer {
    pub fn new(precision: usize) -> Result<Self> {
        if precision < 2 || !precision.is_power_of_two() || precision > 1 << 16 {
            return domain(format!("precision must be a power of two in [2, 65536], got {precision}"));
        }
        let p = precision as f64;
        let edges: Vec<f64> = (1..precision).map(|j| norm_ppf(j as f64 / p)).collect();
        let dens = |j: usize| -> f64 {
            if j == 0 || j == precision {
                0.0
            } else {
                norm_pdf(edges[j - 1])
            }
        };
        let recon = (0..precision).map(|j| p * (dens(j) - dens(j + 1))).collect();
        Ok(Self { precision, edges, recon })
    }

    pub fn precision(&self) -> usize {
        self.precision
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of edges at or below `z`.
    pub fn quantize(&self, z: f64) -> usize {
        self.edges.partition_point(|e| *e <= z)
    }

    pub fn dequantize(&self, index: usize) -> f64 {
        self.recon[index]
    }

    fn lower(&self, j: usize) -> f64 {
        if j == 0 {
            f64::NEG_INFINITY
        } else {
            self.edges[j - 1]
        }
    }

    fn upper(&self, j: usize) -> f64 {
        if j + 1 == self.precision {
            f64::INFINITY
        } else {
            self.edges[j]
        }
    }

    /// Bin masses of `N(mean, sd²)`. Bins further than 12 sd from the mean
    /// get exactly zero; a zero `sd` puts all mass on the mean's bin.
    pub fn gaussian_pmf(&self, mean: f64, sd: f64) -> Vec<f64> {
        let mut pmf = vec![0.0; self.precision];
        if !(sd > 0.0) {
            pmf[self.quantize(mean)] = 1.0;
            return pmf;
        }
        let lo = self.quantize(mean - 12.0 * sd);
        let hi = self.quantize(mean + 12.0 * sd);
        for (j, p) in pmf.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *p = norm_interval((self.lower(j) - mean) / sd, (self.upper(j) - mean) / sd);
        }
        pmf
    }

    /// Coding table of the stationary prior: every bin has mass `1/P`.
    pub fn stationary_table(&self) -> FreqTable {
        FreqTable::uniform(self.precision)
    }

    pub fn gaussian_table(&self, mean: f64, sd: f64) -> FreqTable {
        FreqTable::from_pmf(&self.gaussian_pmf(mean, sd))
    }
}
