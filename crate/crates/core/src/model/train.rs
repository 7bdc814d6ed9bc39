//! Two-stage training with Adam.
//!
//! Stage one places knots at every frame and trains the SDE parts with the
//! point-process network frozen. Stage two samples the knots from the
//! posterior point process and adds a score-function surrogate for its
//! parameters.

use super::forward::{Stage, TimesSource};
use super::{derive_seed, Model, ObsKind};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::nn::{reinforce_coefficients, Adam};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub stage1_fraction: f64,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Train with knots at every frame throughout (the fixed-grid baseline).
    pub full_discretization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 1000, stage1_fraction: 0.4, batch: 16, learning_rate: 3e-4, seed: 0, full_discretization: false }
    }
}

impl TrainConfig {
    pub fn stage1_iterations(&self) -> usize {
        if self.full_discretization {
            self.iterations
        } else {
            ((self.iterations as f64 * self.stage1_fraction).round() as usize).min(self.iterations)
        }
    }
}

/// Batch averages after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
    pub recon: f64,
    pub latent_rate: f64,
    pub times_rate: f64,
    pub mean_points: f64,
    pub nu_min: f64,
    pub nu_median: f64,
    pub nu_max: f64,
    pub global_dims: usize,
}

impl IterationLog {
    pub const HEADER: &'static str = "iteration,stage,loss,recon,latent_rate,times_rate,mean_points,nu_min,nu_median,nu_max,global_dims";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.stage,
            self.loss,
            self.recon,
            self.latent_rate,
            self.times_rate,
            self.mean_points,
            self.nu_min,
            self.nu_median,
            self.nu_max,
            self.global_dims
        )
    }
}

/// Per-knot cost of quantizing a standard-normal value at `precision` bins,
/// beyond its continuous density (nats).
pub fn quantization_offset(precision: usize) -> f64 {
    (precision as f64).ln() - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

fn batch_indices(n: usize, batch: usize, seed: u64, iteration: usize) -> Vec<usize> {
    if n <= batch {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, iteration as u64, u64::MAX));
    let mut idx = rand::seq::index::sample(&mut rng, n, batch).into_vec();
    idx.sort_unstable();
    idx
}

/// Trains `model` in place. `on_iteration` sees every log entry as it is
/// produced. On divergence the parameters of the last good step are kept.
pub fn train(
    model: &mut Model,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    exec: Execution,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<Vec<IterationLog>> {
    if data.is_empty() || cfg.iterations == 0 || cfg.batch == 0 {
        return Err(Error::Config("training needs data, iterations and a positive batch size".into()));
    }
    let stage1 = cfg.stage1_iterations();
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.iterations);
    let offset = match model.config.obs {
        ObsKind::Gaussian => quantization_offset(model.config.train_precision),
        ObsKind::Logistic => 0.0,
    };
    for it in 0..cfg.iterations {
        let stage = if it < stage1 { Stage::Full } else { Stage::Variational };
        let idx = batch_indices(data.len(), cfg.batch, cfg.seed, it);
        let b = idx.len();
        let m: &Model = model;
        let objectives = map_range(exec, b, |i| m.objective(&data[idx[i]], stage, TimesSource::Sample, derive_seed(cfg.seed, it as u64, i as u64)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let comps: Vec<_> = objectives.iter().map(|o| o.components).collect();
        let coeffs = match stage {
            Stage::Full => vec![0.0; b],
            Stage::Variational => {
                let losses: Vec<f64> = comps.iter().map(|c| c.total() + offset * c.coded_values as f64).collect();
                reinforce_coefficients(&losses)
            }
        };
        let per_seq = map_range(exec, b, |i| {
            let o = &objectives[i];
            let mut grads = m.store.zero_grads();
            let gl = o.graph.backward_seeded(o.loss, 1.0 / b as f64);
            o.graph.accumulate_param_grads(&gl, &mut grads);
            if let Some(lq) = o.logq {
                let gq = o.graph.backward_seeded(lq, coeffs[i]);
                o.graph.accumulate_param_grads(&gq, &mut grads);
            }
            grads
        });
        drop(objectives);
        let mut grads = model.store.zero_grads();
        for g in &per_seq {
            for (acc, part) in grads.iter_mut().zip(g) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        let bf = b as f64;
        let mean = |f: &dyn Fn(&super::Components) -> f64| comps.iter().map(f).sum::<f64>() / bf;
        let loss = mean(&|c| c.total());
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Training {
                iteration: it,
                detail: format!(
                    "loss {loss} (recon {}, latent rate {}, times rate {})",
                    mean(&|c| c.recon),
                    mean(&|c| c.latent_rate),
                    mean(&|c| c.times_rate)
                ),
            });
        }
        model.store.check_finite(&grads)?;
        let mask = model.trainable_mask(stage == Stage::Variational);
        adam.step(&mut model.store, &grads, &mask);
        let mut nu = model.nu();
        nu.sort_by(f64::total_cmp);
        let entry = IterationLog {
            iteration: it,
            stage: if stage == Stage::Full { 1 } else { 2 },
            loss,
            recon: mean(&|c| c.recon),
            latent_rate: mean(&|c| c.latent_rate),
            times_rate: mean(&|c| c.times_rate),
            mean_points: mean(&|c| c.points as f64),
            nu_min: nu[0],
            nu_median: nu[nu.len() / 2],
            nu_max: nu[nu.len() - 1],
            global_dims: model.global_dims().iter().filter(|g| **g).count(),
        };
        on_iteration(&entry);
        log.push(entry);
    }
    Ok(log)
}
