//! Coding of quantized latent skeletons.
//!
//! The first knot of every dimension is coded with the stationary prior.
//! Later knots use the OU transition from the previous dequantized value,
//! integrated over the quantizer bins. Pruned dimensions code only their
//! first knot.

use super::ans::{FreqTable, Message};
use super::quantizer::Quantizer;
use super::CodecError;
use crate::ou_prior::transition_params;

/// Inputs shared by encoder and decoder.
#[derive(Debug, Clone, Copy)]
pub struct LatentLayout<'a> {
    pub knot_times: &'a [f64],
    pub nu: &'a [f64],
    pub pruned: &'a [bool],
    pub quantizer: &'a Quantizer,
}

impl LatentLayout<'_> {
    pub fn dims(&self) -> usize {
        self.nu.len()
    }

    /// Number of coded symbols.
    pub fn coded_values(&self) -> usize {
        let k = self.knot_times.len();
        self.pruned.iter().map(|&p| if p { 1 } else { k }).sum()
    }

    /// Table for knot `k` of dimension `d` given the previous knot's index.
    pub fn table(&self, k: usize, d: usize, prev: Option<usize>) -> FreqTable {
        match prev {
            None => self.quantizer.stationary_table(),
            Some(j) => {
                let dt = self.knot_times[k] - self.knot_times[k - 1];
                let (m, v) = transition_params(self.nu[d], dt).expect("validated diffusion");
                self.quantizer.gaussian_table(m * self.quantizer.dequantize(j), v.sqrt())
            }
        }
    }

    fn coded(&self, k: usize, d: usize) -> bool {
        k == 0 || !self.pruned[d]
    }
}

/// Bin indices of a time-major skeleton.
pub fn quantize_skeleton(q: &Quantizer, values: &[f64]) -> Vec<usize> {
    values.iter().map(|v| q.quantize(*v)).collect()
}

/// Pushes the skeleton so that decoding pops knots in time order.
pub fn encode_latents(msg: &mut Message, layout: &LatentLayout, indices: &[usize]) -> Result<(), CodecError> {
    let d = layout.dims();
    let k = layout.knot_times.len();
    assert_eq!(indices.len(), k * d);
    for ki in (0..k).rev() {
        for di in (0..d).rev() {
            if !layout.coded(ki, di) {
                continue;
            }
            let prev = (ki > 0).then(|| indices[(ki - 1) * d + di]);
            msg.push(&layout.table(ki, di, prev), indices[ki * d + di])?;
        }
    }
    Ok(())
}

/// Pops a skeleton; pruned dimensions repeat their first index.
pub fn decode_latents(msg: &mut Message, layout: &LatentLayout) -> Result<Vec<usize>, CodecError> {
    let d = layout.dims();
    let k = layout.knot_times.len();
    let mut out = vec![0usize; k * d];
    for ki in 0..k {
        for di in 0..d {
            out[ki * d + di] = if layout.coded(ki, di) {
                let prev = (ki > 0).then(|| out[(ki - 1) * d + di]);
                msg.pop(&layout.table(ki, di, prev))?
            } else {
                out[di]
            };
        }
    }
    Ok(out)
}

/// `Σ −log2 P(index)` under the coding tables.
pub fn information_bits(layout: &LatentLayout, indices: &[usize]) -> f64 {
    let d = layout.dims();
    let mut total = 0.0;
    for ki in 0..layout.knot_times.len() {
        for di in 0..d {
            if layout.coded(ki, di) {
                let prev = (ki > 0).then(|| indices[(ki - 1) * d + di]);
                total += layout.table(ki, di, prev).bits(indices[ki * d + di]);
            }
        }
    }
    total
}
