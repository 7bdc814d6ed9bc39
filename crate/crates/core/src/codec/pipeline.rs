//! End-to-end compression of single sequences against a trained model.

use super::ans::Message;
use super::astar::{decode_times, encode_times, read_indices, rec_rate_bits, write_indices};
use super::bitsback::{bitsback_decode, bitsback_encode};
use super::container::{Container, Mode, TimesBlock, TimesMode};
use super::latents::{decode_latents, encode_latents, information_bits, quantize_skeleton, LatentLayout};
use super::quantizer::Quantizer;
use super::CodecError;
use crate::error::{Error, Result};
use crate::model::{derive_seed, Model};
use crate::nn::Graph;
use crate::tpp::{sample_posterior, DiscretizationSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random words seeding the bits-back message; doubled until enough.
pub const INITIAL_WORDS: usize = 32;
const MAX_INITIAL_WORDS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressOptions {
    pub mode: Mode,
    pub precision: usize,
    pub times: TimesMode,
    /// Code near-deterministic dimensions by their initial value only.
    pub prune: bool,
    pub seed: u64,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self { mode: Mode::Lossy, precision: 256, times: TimesMode::Raw, prune: true, seed: 0 }
    }
}

/// Bit accounting for one compressed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressReport {
    /// Bits of the serialized latent message (lossy) or net bits-back
    /// rate (lossless).
    pub bits_latents: f64,
    /// Exact size of the final ANS state, `log2(head) + 16·words`.
    pub message_bits: f64,
    /// Summed information content of the coded latent indices.
    pub info_bits_latents: f64,
    /// Bits the times block occupies.
    pub bits_times_stored: usize,
    /// `(log q − log p)/ln 2` of the chosen time set.
    pub bits_times_estimate: f64,
    /// One-time bits-back overhead (lossless only).
    pub initial_bits: f64,
    pub points: usize,
    pub pruned_dims: usize,
    pub times_mode: TimesMode,
    /// Set when A* refused and the times were stored raw instead.
    pub astar_fallback: Option<String>,
}

impl CompressReport {
    /// Latent bits plus the time-set cost: the A* code when present, the
    /// rate estimate for raw times, nothing when every frame is a knot.
    pub fn bits_total(&self) -> f64 {
        self.bits_latents
            + match self.times_mode {
                TimesMode::AStar => self.bits_times_stored as f64,
                TimesMode::Raw => self.bits_times_estimate,
                TimesMode::AllFrames => 0.0,
            }
    }
}

fn astar_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xA5, 0)
}

fn all_frame_times(model: &Model) -> Vec<f64> {
    let f = model.config.frame_times();
    f[..f.len() - 1].to_vec()
}

fn knots_of(times: &[f64], t_end: f64) -> Vec<f64> {
    DiscretizationSet { times: times.to_vec(), log_q: 0.0, log_p: 0.0 }.knots(t_end)
}

pub fn compress(model: &Model, x: &[f64], opts: &CompressOptions) -> Result<(Container, CompressReport)> {
    let c = &model.config;
    let (t_end, lambda) = (c.t_end(), c.lambda());
    let q = Quantizer::new(opts.precision)?;
    let mut g = Graph::new();
    let enc = model.encode(&mut g, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (eps, bm_seed) = model.sequence_noise(&mut rng);
    let gaps = |cursor: f64| model.gap_dist(&enc, cursor);

    let mut fallback = None;
    let (times, block, estimate) = match opts.times {
        TimesMode::AllFrames => (all_frame_times(model), TimesBlock::AllFrames, 0.0),
        mode => {
            let coded = match mode {
                TimesMode::AStar => match encode_times(&gaps, lambda, t_end, astar_seed(opts.seed)) {
                    Ok(ct) => Some(ct),
                    Err(CodecError::AStarRefused(why)) => {
                        log::warn!("A* refused ({why}); storing raw times");
                        fallback = Some(why);
                        None
                    }
                    Err(e) => return Err(e.into()),
                },
                _ => None,
            };
            match coded {
                Some(ct) => {
                    let (bytes, bits) = write_indices(&ct.indices);
                    let est = rec_rate_bits(ct.set.log_q, ct.set.log_p);
                    (ct.set.times, TimesBlock::AStar { bits, bytes }, est)
                }
                None => {
                    let s = sample_posterior(&gaps, t_end, lambda, &mut rng);
                    let est = rec_rate_bits(s.log_q, s.log_p);
                    (s.times.clone(), TimesBlock::Raw(s.times), est)
                }
            }
        }
    };
    let knots = knots_of(&times, t_end);
    let nu = model.nu();

    let (payload, message_bits, bits_latents, info, initial_bits, pruned) = match opts.mode {
        Mode::Lossy => {
            let pruned = if opts.prune { model.global_dims() } else { vec![false; c.latent_dim] };
            let inf = model.infer(&enc, &mut g, &times, &eps, bm_seed, opts.prune.then_some(&pruned[..]))?;
            let layout = LatentLayout { knot_times: &knots, nu: &nu, pruned: &pruned, quantizer: &q };
            let indices = quantize_skeleton(&q, &inf.values);
            let mut msg = Message::new();
            encode_latents(&mut msg, &layout, &indices)?;
            let info = information_bits(&layout, &indices);
            let bytes = msg.to_bytes();
            let bits = 8.0 * bytes.len() as f64;
            (bytes, msg.content_bits(), bits, info, 0.0, pruned)
        }
        Mode::Lossless => {
            let mut words = INITIAL_WORDS;
            let mut seed_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0xB8, 0));
            loop {
                let mut msg = Message::random(words, &mut seed_rng);
                let start = msg.content_bits();
                match bitsback_encode(model, x, &times, &q, &mut msg) {
                    Ok(cost) => {
                        let net = msg.content_bits() - start;
                        break (msg.to_bytes(), msg.content_bits(), net, cost.net(), start, vec![false; c.latent_dim]);
                    }
                    Err(Error::Codec(CodecError::InsufficientInitialBits)) if words < MAX_INITIAL_WORDS => {
                        words *= 2;
                        log::debug!("bits-back needs more initial bits; retrying with {words} words");
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    };

    let report = CompressReport {
        bits_latents,
        message_bits,
        info_bits_latents: info,
        bits_times_stored: block.stored_bits(),
        bits_times_estimate: estimate,
        initial_bits,
        points: times.len(),
        pruned_dims: pruned.iter().filter(|p| **p).count(),
        times_mode: block.mode(),
        astar_fallback: fallback,
    };
    let container = Container {
        mode: opts.mode,
        pruned: opts.prune && opts.mode == Mode::Lossy,
        model_hash: model.hash(),
        lambda,
        frame_dt: c.frame_dt,
        frames: c.frames as u32,
        points: times.len() as u32,
        precision: opts.precision as u32,
        seed: opts.seed,
        times: block,
        payload,
    };
    Ok((container, report))
}

/// The decoded time set of a container.
pub fn container_times(model: &Model, container: &Container) -> Result<Vec<f64>> {
    let t_end = model.config.t_end();
    let times = match &container.times {
        TimesBlock::AllFrames => all_frame_times(model),
        TimesBlock::Raw(t) => t.clone(),
        TimesBlock::AStar { bits, bytes } => {
            let idx = read_indices(bytes, *bits)?;
            decode_times(&idx, container.lambda, t_end, astar_seed(container.seed))?
        }
    };
    if times.len() != container.points as usize {
        return Err(CodecError::Corrupt("point count does not match the times block".into()).into());
    }
    crate::tpp::check_times(&times, t_end).map_err(|e| CodecError::Corrupt(e.to_string()))?;
    Ok(times)
}

/// Reconstructs a sequence. Lossy containers decode at `query` (the frame
/// times when `None`); lossless containers return the original bytes.
pub fn decompress(model: &Model, container: &Container, query: Option<&[f64]>) -> Result<Vec<f64>> {
    let c = &model.config;
    let expected = model.hash();
    if container.model_hash != expected {
        return Err(CodecError::ModelMismatch { expected, found: container.model_hash }.into());
    }
    if container.frames as usize != c.frames || container.frame_dt != c.frame_dt || container.lambda != c.lambda() {
        return Err(CodecError::Corrupt("time axis does not match the model".into()).into());
    }
    let q = Quantizer::new(container.precision as usize).map_err(|e| CodecError::Corrupt(e.to_string()))?;
    let times = container_times(model, container)?;
    let mut msg = Message::from_bytes(&container.payload)?;
    match container.mode {
        Mode::Lossy => {
            let knots = knots_of(&times, c.t_end());
            let nu = model.nu();
            let pruned = if container.pruned { model.global_dims() } else { vec![false; c.latent_dim] };
            let layout = LatentLayout { knot_times: &knots, nu: &nu, pruned: &pruned, quantizer: &q };
            let indices = decode_latents(&mut msg, &layout)?;
            if msg != Message::new() {
                return Err(CodecError::Corrupt("trailing data after the latents".into()).into());
            }
            let values: Vec<f64> = indices.iter().map(|&i| q.dequantize(i)).collect();
            let frames = c.frame_times();
            model.reconstruct(&knots, &values, query.unwrap_or(&frames))
        }
        Mode::Lossless => bitsback_decode(model, &times, &q, &mut msg),
    }
}
