//! Rate-distortion evaluation over a dataset.

use crate::codec::pipeline::{compress, decompress, CompressOptions};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::model::{derive_seed, Model};

/// Per-sequence averages at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RdRow {
    pub precision: usize,
    pub bits_total: f64,
    pub bits_latents: f64,
    pub bits_times_estimate: f64,
    pub m_mean: f64,
    pub pruned_dims: usize,
    pub mse: f64,
    pub mae: f64,
}

impl RdRow {
    pub const HEADER: &'static str = "precision,bits_total,bits_latents,bits_times_estimate,M_mean,pruned_dims,mse,mae";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.precision, self.bits_total, self.bits_latents, self.bits_times_estimate, self.m_mean, self.pruned_dims, self.mse, self.mae
        )
    }
}

/// Seed used for sequence `index` of a run seeded with `seed`.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 0xC0DE, index as u64)
}

/// Compresses and decodes every sequence of `inputs` (model units) and
/// scores the reconstructions against `targets` in original units.
pub fn evaluate(model: &Model, inputs: &[Vec<f64>], targets: &[Vec<f64>], opts: &CompressOptions, exec: Execution) -> Result<RdRow> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config("need matching, non-empty inputs and targets".into()));
    }
    let per_seq = map_range(exec, inputs.len(), |i| -> Result<_> {
        let o = CompressOptions { seed: sequence_seed(opts.seed, i), ..*opts };
        let (cont, rep) = compress(model, &inputs[i], &o)?;
        let mut xhat = decompress(model, &cont, None)?;
        if let Some(n) = &model.normalization {
            n.invert(&mut xhat);
        }
        let (se, ae) = xhat.iter().zip(&targets[i]).fold((0.0, 0.0), |(s, a), (p, t)| (s + (p - t).powi(2), a + (p - t).abs()));
        let n = xhat.len() as f64;
        Ok((rep, se / n, ae / n))
    });
    let rows = per_seq.into_iter().collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&(crate::codec::pipeline::CompressReport, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(RdRow {
        precision: opts.precision,
        bits_total: mean(&|r| r.0.bits_total()),
        bits_latents: mean(&|r| r.0.bits_latents),
        bits_times_estimate: mean(&|r| r.0.bits_times_estimate),
        m_mean: mean(&|r| r.0.points as f64),
        pruned_dims: rows[0].0.pruned_dims,
        mse: mean(&|r| r.1),
        mae: mean(&|r| r.2),
    })
}

/// One row per precision, evaluated concurrently.
pub fn rd_sweep(model: &Model, inputs: &[Vec<f64>], targets: &[Vec<f64>], precisions: &[usize], opts: &CompressOptions, exec: Execution) -> Result<Vec<RdRow>> {
    map_range(exec, precisions.len(), |k| {
        let o = CompressOptions { precision: precisions[k], ..*opts };
        // sequences run sequentially inside each precision point
        evaluate(model, inputs, targets, &o, Execution::Sequential)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::container::TimesMode;
    use crate::model::ModelConfig;

    #[test]
    fn sweep_is_monotone_and_reconciles_with_containers() {
        let c = ModelConfig { channels: 2, frames: 16, latent_dim: 3, hidden: 4, width: 8, embed_width: 4, ..Default::default() };
        let m = Model::new(c, 1).unwrap();
        let data: Vec<Vec<f64>> = (0..4).map(|s| (0..32).map(|i| ((i + s) as f64 * 0.3).sin()).collect()).collect();
        let opts = CompressOptions { times: TimesMode::Raw, seed: 11, ..Default::default() };
        let rows = rd_sweep(&m, &data, &data, &[16, 64, 256, 1024], &opts, Execution::default()).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].bits_total >= w[0].bits_total, "{:?}", rows);
            assert!(w[1].mse <= w[0].mse * 1.5 + 1e-9);
        }
        let bytes: f64 = (0..4)
            .map(|i| {
                let o = CompressOptions { seed: sequence_seed(11, i), precision: 64, ..opts };
                8.0 * compress(&m, &data[i], &o).unwrap().0.payload.len() as f64
            })
            .sum();
        assert_eq!(rows[1].bits_latents, bytes / 4.0);
        assert!(rows[0].csv_row().split(',').count() == RdRow::HEADER.split(',').count());
    }
}
