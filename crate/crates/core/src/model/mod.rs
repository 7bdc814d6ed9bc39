//! The variational-discretization latent SDE: parameters, checkpoints, the
//! differentiable forward pass, and training.

pub mod check;
mod forward;
mod train;

pub use forward::{lossy_rate_nats, Components, Encoded, Inference, Posterior, SequenceObjective, Stage, TimesSource};
pub use train::{train, IterationLog, TrainConfig};

use crate::error::{Error, Result};
use crate::interp::CubicBasis;
use crate::nn::{BiGru, Mlp, ParamId, ParamStore};
use crate::numerics::inv_softplus;
use crate::ou_prior::GLOBAL_NU_THRESHOLD;
use crate::tpp::{DEFAULT_T_MAX, SCALE_FLOOR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsKind {
    /// Gaussian with fixed standard deviation, for lossy coding.
    Gaussian,
    /// Mixture of discretized logistics over 8-bit values, for lossless coding.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconKind {
    Linear,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub frames: usize,
    pub frame_dt: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub width: usize,
    pub embed_width: usize,
    /// Prior intensity as a fraction of the frame count.
    pub lambda_frac: f64,
    pub t_max: f64,
    pub sigma_obs: f64,
    pub obs: ObsKind,
    pub mixture: usize,
    pub recon: ReconKind,
    pub substeps: usize,
    pub nu_init: f64,
    pub prune_threshold: f64,
    /// Quantizer precision assumed when the training loss prices a knot.
    pub train_precision: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            frames: 100,
            frame_dt: 0.1,
            latent_dim: 16,
            hidden: 64,
            width: 128,
            embed_width: 64,
            lambda_frac: 0.5,
            t_max: DEFAULT_T_MAX,
            sigma_obs: 0.1,
            obs: ObsKind::Gaussian,
            mixture: 5,
            recon: ReconKind::Linear,
            substeps: 4,
            nu_init: 0.5,
            prune_threshold: GLOBAL_NU_THRESHOLD,
            train_precision: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels == 0 || self.latent_dim == 0 || self.hidden == 0 || self.width == 0 || self.embed_width == 0 {
            return bad("layer sizes must be positive");
        }
        if self.frames < 2 {
            return bad("sequences need at least two frames");
        }
        if !(self.frame_dt > 0.0) || !(self.t_max > 0.0) || !(self.sigma_obs > 0.0) || !(self.nu_init > 0.0) {
            return bad("frame_dt, t_max, sigma_obs and nu_init must be positive");
        }
        if !(self.lambda_frac > 0.0 && self.lambda_frac <= 1.0) {
            return bad("lambda_frac must lie in (0, 1]");
        }
        if self.substeps == 0 || self.mixture == 0 {
            return bad("substeps and mixture must be at least one");
        }
        if !self.train_precision.is_power_of_two() || self.train_precision < 2 {
            return bad("train_precision must be a power of two");
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.frames as f64 * self.frame_dt
    }

    /// Prior points per unit time.
    pub fn lambda(&self) -> f64 {
        self.lambda_frac * self.frames as f64 / self.t_end()
    }

    /// Data times `i · Δt` for `i = 1..=frames`.
    pub fn frame_times(&self) -> Vec<f64> {
        (1..=self.frames).map(|i| i as f64 * self.frame_dt).collect()
    }

    fn decoder_outputs(&self) -> usize {
        match self.obs {
            ObsKind::Gaussian => self.channels,
            ObsKind::Logistic => self.channels * 3 * self.mixture,
        }
    }
}

/// Per-channel affine normalization of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn apply(&self, x: &mut [f64]) {
        let c = self.mean.len();
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        let c = self.mean.len();
        for (i, v) in x.iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    normalization: Option<Normalization>,
}

#[derive(Debug, Clone)]
pub(crate) struct Nets {
    pub embed: Mlp,
    pub gru: BiGru,
    pub z0: Mlp,
    pub drift: Mlp,
    pub decoder: Mlp,
    pub tpp: Mlp,
    pub log_nu: ParamId,
}

impl Nets {
    fn bind(store: &ParamStore, c: &ModelConfig) -> Option<Self> {
        Some(Self {
            embed: Mlp::bind(store, "embed", 2)?,
            gru: BiGru::bind(store, "gru", c.hidden)?,
            z0: Mlp::bind(store, "z0", 1)?,
            drift: Mlp::bind(store, "drift", 3)?,
            decoder: Mlp::bind(store, "dec", 3)?,
            tpp: Mlp::bind(store, "tpp", 3)?,
            log_nu: store.find("log_nu")?,
        })
    }
}

/// A model instance: configuration, parameters and cached operators.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub normalization: Option<Normalization>,
    pub(crate) nets: Nets,
    pub(crate) basis: Arc<CubicBasis>,
    pub(crate) basis_op: Arc<Vec<f64>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let two_h = 2 * c.hidden;
        Mlp::new(&mut store, "embed", &[c.channels, c.embed_width, c.embed_width], &mut rng);
        BiGru::new(&mut store, "gru", c.embed_width, c.hidden, &mut rng);
        Mlp::new(&mut store, "z0", &[two_h, 2 * c.latent_dim], &mut rng);
        Mlp::new(&mut store, "drift", &[c.latent_dim + two_h, c.width, c.width, c.latent_dim], &mut rng);
        Mlp::new(&mut store, "dec", &[c.latent_dim, c.width, c.width, c.decoder_outputs()], &mut rng);
        let tpp = Mlp::new(&mut store, "tpp", &[two_h + 2, c.width, c.width, 2], &mut rng);
        store.add("log_nu", 1, c.latent_dim, vec![c.nu_init.ln(); c.latent_dim]);
        // start the gaps near the prior mean with a moderate spread
        let (_, b) = tpp.output_layer();
        let bias = &mut store.tensor_mut(b).data;
        bias[0] = inv_softplus(1.0 / c.lambda());
        bias[1] = inv_softplus(0.5 - SCALE_FLOOR);
        Self::assemble(config, store, None)
    }

    fn assemble(config: ModelConfig, store: ParamStore, normalization: Option<Normalization>) -> Result<Self> {
        let nets = Nets::bind(&store, &config).ok_or_else(|| Error::Config("checkpoint does not match the model layout".into()))?;
        let basis = CubicBasis::new(&config.frame_times())?;
        let basis_op = Arc::new(basis.second_op.clone());
        Ok(Self { config, store, normalization, nets, basis: Arc::new(basis), basis_op })
    }

    /// Diffusion per latent dimension.
    pub fn nu(&self) -> Vec<f64> {
        self.store.tensor(self.nets.log_nu).data.iter().map(|l| l.exp()).collect()
    }

    /// Dimensions whose diffusion is at or below the pruning threshold.
    pub fn global_dims(&self) -> Vec<bool> {
        self.nu().iter().map(|&n| n <= self.config.prune_threshold).collect()
    }

    /// Trainable mask that freezes the point-process network.
    pub fn trainable_mask(&self, include_tpp: bool) -> Vec<bool> {
        self.store.iter().map(|(_, t)| include_tpp || !t.name.starts_with("tpp.")).collect()
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        let header = Header { model: self.config.clone(), normalization: self.normalization.clone() };
        let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
        self.store.write_checkpoint(w, &text)
    }

    pub fn read<R: std::io::Read>(r: R) -> Result<Self> {
        let (text, store) = ParamStore::read_checkpoint(r)?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
        header.model.validate()?;
        Self::assemble(header.model, store, header.normalization)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    /// First eight bytes of the SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> u64 {
        hash_bytes(&self.to_bytes())
    }
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Derives an independent seed from a base seed and two counters.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ a) ^ b.rotate_left(32))
}
