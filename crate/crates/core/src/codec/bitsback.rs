//! Bits-back coding of 8-bit sequences.
//!
//! The encoder first pops the latent skeleton from the message with the
//! discretized posterior, then pushes the data under the decoder and the
//! latents under the OU prior. The decoder runs the same steps in reverse
//! and returns the message to its state before encoding, so the net cost of
//! a sequence approaches the discretized negative ELBO.

use super::ans::{FreqTable, Message};
use super::latents::{decode_latents, encode_latents, information_bits, LatentLayout};
use super::quantizer::Quantizer;
use super::CodecError;
use crate::error::{Error, Result};
use crate::model::{Encoded, Model, ObsKind};
use crate::nn::graph::disc_mix_pmf;
use crate::nn::Graph;
use crate::tpp::DiscretizationSet;

/// Information content (bits) of one bits-back step, split by term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BitsBackCost {
    pub data_bits: f64,
    pub prior_bits: f64,
    pub posterior_bits: f64,
}

impl BitsBackCost {
    /// Discretized negative ELBO in bits.
    pub fn net(&self) -> f64 {
        self.data_bits + self.prior_bits - self.posterior_bits
    }
}

struct Skeleton<'a> {
    model: &'a Model,
    knots: Vec<f64>,
    quantizer: &'a Quantizer,
    nu: Vec<f64>,
    pruned: Vec<bool>,
}

impl<'a> Skeleton<'a> {
    fn new(model: &'a Model, times: &[f64], quantizer: &'a Quantizer) -> Result<Self> {
        if model.config.obs != ObsKind::Logistic {
            return Err(Error::Config("lossless coding needs a model with a discretized logistic decoder".into()));
        }
        crate::tpp::check_times(times, model.config.t_end())?;
        let knots = DiscretizationSet { times: times.to_vec(), log_q: 0.0, log_p: 0.0 }.knots(model.config.t_end());
        let d = model.config.latent_dim;
        Ok(Self { model, knots, quantizer, nu: model.nu(), pruned: vec![false; d] })
    }

    fn layout(&self) -> LatentLayout<'_> {
        LatentLayout { knot_times: &self.knots, nu: &self.nu, pruned: &self.pruned, quantizer: self.quantizer }
    }

    fn dims(&self) -> usize {
        self.nu.len()
    }

    /// Posterior tables for knot `k` given the dequantized previous knot.
    fn posterior_tables(&self, enc: &Encoded, k: usize, prev: &[f64]) -> Vec<FreqTable> {
        let q = self.quantizer;
        if k == 0 {
            let (mean, std) = self.model.z0_params(enc);
            return mean.iter().zip(&std).map(|(m, s)| q.gaussian_table(*m, *s)).collect();
        }
        let t = self.knots[k - 1];
        let dt = self.knots[k] - t;
        let f = self.model.drift_value(enc, prev, t);
        (0..self.dims()).map(|d| q.gaussian_table(prev[d] + dt * f[d], dt.sqrt() * self.nu[d])).collect()
    }

    fn dequantize(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.quantizer.dequantize(i)).collect()
    }

    /// Per-frame, per-channel tables of the data given the skeleton.
    fn data_tables(&self, indices: &[usize]) -> Result<Vec<FreqTable>> {
        let m = self.model;
        let c = &m.config;
        let z = m.zhat(&self.knots, &self.dequantize(indices), &c.frame_times())?;
        let k = c.mixture;
        Ok(z.chunks(c.latent_dim)
            .flat_map(|zi| {
                let out = m.decoder_output(zi);
                (0..c.channels).map(move |ch| FreqTable::from_pmf(&disc_mix_pmf(&out[ch * 3 * k..(ch + 1) * 3 * k], k))).collect::<Vec<_>>()
            })
            .collect())
    }
}

fn symbols(model: &Model, x: &[f64]) -> Result<Vec<usize>> {
    let c = &model.config;
    if x.len() != c.frames * c.channels || x.iter().any(|v| !(0.0..=255.0).contains(v) || v.fract() != 0.0) {
        return Err(Error::Domain("lossless coding takes integer values in 0..=255".into()));
    }
    Ok(x.iter().map(|v| *v as usize).collect())
}

/// Appends `x` to `msg`. Fails with `InsufficientInitialBits` when the
/// message holds too few bits to pop the latents from.
pub fn bitsback_encode(model: &Model, x: &[f64], times: &[f64], quantizer: &Quantizer, msg: &mut Message) -> Result<BitsBackCost> {
    let sk = Skeleton::new(model, times, quantizer)?;
    let sym = symbols(model, x)?;
    let mut g = Graph::new();
    let enc = model.encode(&mut g, x)?;
    let d = sk.dims();
    let mut indices = Vec::with_capacity(sk.knots.len() * d);
    let mut posterior_bits = 0.0;
    let mut prev = Vec::new();
    for k in 0..sk.knots.len() {
        let tables = sk.posterior_tables(&enc, k, &prev);
        for t in &tables {
            let i = msg.pop(t)?;
            posterior_bits += t.bits(i);
            indices.push(i);
        }
        prev = sk.dequantize(&indices[k * d..]);
    }
    let tables = sk.data_tables(&indices)?;
    let mut data_bits = 0.0;
    for (t, s) in tables.iter().zip(&sym).rev() {
        msg.push(t, *s)?;
        data_bits += t.bits(*s);
    }
    encode_latents(msg, &sk.layout(), &indices)?;
    let prior_bits = information_bits(&sk.layout(), &indices);
    Ok(BitsBackCost { data_bits, prior_bits, posterior_bits })
}

/// Recovers the most recently encoded sequence and restores `msg`.
pub fn bitsback_decode(model: &Model, times: &[f64], quantizer: &Quantizer, msg: &mut Message) -> Result<Vec<f64>> {
    let sk = Skeleton::new(model, times, quantizer)?;
    let indices = decode_latents(msg, &sk.layout())?;
    let tables = sk.data_tables(&indices)?;
    let x = tables.iter().map(|t| msg.pop(t).map(|s| s as f64)).collect::<std::result::Result<Vec<_>, CodecError>>()?;
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &x)?;
    let d = sk.dims();
    let mut all = Vec::with_capacity(sk.knots.len());
    let mut prev = Vec::new();
    for k in 0..sk.knots.len() {
        all.push(sk.posterior_tables(&enc, k, &prev));
        prev = sk.dequantize(&indices[k * d..(k + 1) * d]);
    }
    for k in (0..sk.knots.len()).rev() {
        for j in (0..d).rev() {
            msg.push(&all[k][j], indices[k * d + j])?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let c = ModelConfig { channels: 2, frames: 8, latent_dim: 2, hidden: 4, width: 8, embed_width: 4, obs: ObsKind::Logistic, mixture: 3, ..Default::default() };
        Model::new(c, 5).unwrap()
    }

    fn seq(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let base: f64 = rng.random_range(40.0..200.0);
        (0..16).map(|i| (base + 30.0 * (i as f64 * 0.4).sin() + rng.random_range(-5.0..5.0)).round().clamp(0.0, 255.0)).collect()
    }

    #[test]
    fn round_trip_restores_message() {
        let m = model();
        let q = Quantizer::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let times = [0.25, 0.4, 0.61];
        for _ in 0..5 {
            let x = seq(&mut rng);
            let mut msg = Message::random(32, &mut rng);
            let before = msg.clone();
            bitsback_encode(&m, &x, &times, &q, &mut msg).unwrap();
            let back = bitsback_decode(&m, &times, &q, &mut msg).unwrap();
            assert_eq!(back, x);
            assert_eq!(msg, before);
        }
    }

    #[test]
    fn chained_rate_tracks_the_elbo() {
        let m = model();
        let q = Quantizer::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut msg = Message::random(32, &mut rng);
        let start = msg.content_bits();
        let mut elbo = 0.0;
        let mut seqs = Vec::new();
        for _ in 0..50 {
            let x = seq(&mut rng);
            elbo += bitsback_encode(&m, &x, &[], &q, &mut msg).unwrap().net();
            seqs.push(x);
        }
        let net = msg.content_bits() - start;
        assert!((net - elbo).abs() <= 0.01 * elbo, "{net} vs {elbo}");
        for x in seqs.iter().rev() {
            assert_eq!(&bitsback_decode(&m, &[], &q, &mut msg).unwrap(), x);
        }
        assert!((msg.content_bits() - start).abs() < 1e-9);
    }

    #[test]
    fn empty_message_reports_missing_initial_bits() {
        let m = model();
        let q = Quantizer::new(1024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = seq(&mut rng);
        let err = bitsback_encode(&m, &x, &[0.3], &q, &mut Message::new()).unwrap_err();
        assert!(matches!(err, Error::Codec(CodecError::InsufficientInitialBits)), "{err}");
    }

    #[test]
    fn rejects_non_byte_data_and_gaussian_models() {
        let m = model();
        let q = Quantizer::new(16).unwrap();
        let mut msg = Message::random(32, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(bitsback_encode(&m, &[0.5; 16], &[], &q, &mut msg).is_err());
        let g = Model::new(ModelConfig { obs: ObsKind::Gaussian, ..m.config.clone() }, 0).unwrap();
        assert!(bitsback_encode(&g, &[1.0; 16], &[], &q, &mut msg).is_err());
    }
}
