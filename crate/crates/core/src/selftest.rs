//! Built-in invariant checks run by `ctsq selftest`.
//!
//! Each check is small enough to finish in seconds; the full property
//! suites live in the test targets.

use crate::codec::astar::{decode_times, encode_times};
use crate::codec::bitsback::{bitsback_decode, bitsback_encode};
use crate::codec::container::{Container, TimesMode};
use crate::codec::pipeline::{compress, decompress, CompressOptions};
use crate::codec::{FreqTable, Message, Quantizer};
use crate::exec::Execution;
use crate::model::check::{gradient_check, surrogate_leaks};
use crate::model::{train, Model, ModelConfig, ObsKind, Stage, TrainConfig};
use crate::ou_prior::transition_params;
use crate::tpp::{GapDistribution, SoftplusLogistic};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Check = fn() -> Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ou_identities() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let nu = rng.random_range(0.05..3.0);
        let (d1, d2) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
        let (a1, v1) = transition_params(nu, d1).map_err(err)?;
        let (a2, v2) = transition_params(nu, d2).map_err(err)?;
        let (a, v) = transition_params(nu, d1 + d2).map_err(err)?;
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
        ensure(rel(a1 * a2, a) < 1e-12 && rel(a2 * a2 * v1 + v2, v) < 1e-12, || format!("composition fails at nu={nu}"))?;
        ensure((a * a + v - 1.0).abs() < 1e-12, || format!("stationarity fails at nu={nu}"))?;
    }
    Ok(())
}

fn softplus_logistic_cdf() -> Result<(), String> {
    let d = SoftplusLogistic::untruncated(0.0, 1.0);
    for i in 1..=20 {
        let x = 0.25 * i as f64;
        let want = 1.0 - (-x).exp();
        ensure((d.cdf(x) - want).abs() < 1e-9, || format!("cdf({x}) = {} vs {want}", d.cdf(x)))?;
    }
    Ok(())
}

fn ans_exactness() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let n = rng.random_range(2..40);
        let pmf: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t = FreqTable::from_pmf(&pmf);
        let mut m = Message::random(4, &mut rng);
        let before = m.clone();
        let syms: Vec<usize> = (0..rng.random_range(1..50)).map(|_| rng.random_range(0..n)).collect();
        for s in &syms {
            m.push(&t, *s).map_err(err)?;
        }
        for s in syms.iter().rev() {
            ensure(m.pop(&t).map_err(err)? == *s, || format!("case {case}: wrong symbol"))?;
        }
        ensure(m == before, || format!("case {case}: message not restored"))?;
    }
    // a sequence whose symbol counts match the source exactly has 1.75 bits
    // of information per symbol, so the bound does not depend on the draw
    let t = FreqTable::from_pmf(&[0.5, 0.25, 0.125, 0.125]);
    let n = 100_000;
    let mut syms: Vec<usize> = [(0, n / 2), (1, n / 4), (2, n / 8), (3, n / 8)].iter().flat_map(|&(s, k)| std::iter::repeat_n(s, k)).collect();
    syms.shuffle(&mut rng);
    let mut m = Message::new();
    for s in &syms {
        m.push(&t, *s).map_err(err)?;
    }
    let bits = m.bits() as f64;
    ensure((bits - 1.75 * n as f64).abs() <= 0.001 * 1.75 * n as f64 + 64.0, || format!("{bits} bits for {n} symbols"))
}

fn quantizer() -> Result<(), String> {
    let q = Quantizer::new(64).map_err(err)?;
    ensure(q.edges().windows(2).all(|w| w[0] < w[1]), || "edges not increasing".into())?;
    for i in 0..64 {
        ensure(q.quantize(q.dequantize(i)) == i, || format!("bin {i} is not idempotent"))?;
    }
    Ok(())
}

fn tiny(obs: ObsKind, frames: usize) -> ModelConfig {
    ModelConfig { channels: 2, frames, latent_dim: 2, hidden: 3, width: 6, embed_width: 4, obs, mixture: 2, ..Default::default() }
}

fn series(c: &ModelConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.random_range(0.0..6.0);
    (0..c.frames * c.channels)
        .map(|i| {
            let v = (phase + 0.4 * i as f64).sin();
            match c.obs {
                ObsKind::Gaussian => v,
                ObsKind::Logistic => (127.5 + 120.0 * v).round(),
            }
        })
        .collect()
}

fn gradients() -> Result<(), String> {
    let c = tiny(ObsKind::Gaussian, 5);
    let mut m = Model::new(c.clone(), 7).map_err(err)?;
    let x = series(&c, 1);
    let r = gradient_check(&mut m, &x, Stage::Variational, &[0.13, 0.27, 0.41], 3, 2).map_err(err)?;
    ensure(r.worst <= 1e-4, || format!("relative error {} at {}", r.worst, r.worst_param))?;
    let (leaks, tpp) = surrogate_leaks(&m, &x, 4).map_err(err)?;
    ensure(leaks.is_empty() && tpp, || format!("surrogate reaches {leaks:?}"))
}

fn astar_times() -> Result<(), String> {
    let gaps = |c: f64| SoftplusLogistic::new(-0.5 + 0.1 * c, 0.4, 1.0);
    let (lambda, t_end) = (5.0, 2.0);
    for seed in 0..5 {
        let coded = encode_times(&gaps, lambda, t_end, seed).map_err(err)?;
        let back = decode_times(&coded.indices, lambda, t_end, seed).map_err(err)?;
        ensure(back == coded.set.times, || format!("seed {seed}: decoded times differ"))?;
    }
    Ok(())
}

fn bits_back() -> Result<(), String> {
    let c = tiny(ObsKind::Logistic, 8);
    let m = Model::new(c.clone(), 5).map_err(err)?;
    let q = Quantizer::new(32).map_err(err)?;
    let mut msg = Message::random(32, &mut ChaCha8Rng::seed_from_u64(9));
    let start = msg.clone();
    let seqs: Vec<Vec<f64>> = (0..3).map(|s| series(&c, s)).collect();
    for x in &seqs {
        bitsback_encode(&m, x, &[0.3, 0.55], &q, &mut msg).map_err(err)?;
    }
    for x in seqs.iter().rev() {
        ensure(&bitsback_decode(&m, &[0.3, 0.55], &q, &mut msg).map_err(err)? == x, || "sequence not recovered".into())?;
    }
    ensure(msg == start, || "message not restored".into())
}

fn codec_pipeline() -> Result<(), String> {
    let c = ModelConfig { frames: 20, ..tiny(ObsKind::Gaussian, 20) };
    let m = Model::new(c.clone(), 6).map_err(err)?;
    let x = series(&c, 2);
    let opts = CompressOptions { times: TimesMode::Raw, precision: 128, seed: 4, ..Default::default() };
    let a = compress(&m, &x, &opts).map_err(err)?.0.to_bytes();
    ensure(a == compress(&m, &x, &opts).map_err(err)?.0.to_bytes(), || "containers differ for one seed".into())?;
    let cont = Container::from_bytes(&a).map_err(err)?.0;
    let frames = c.frame_times();
    let one = decompress(&m, &cont, Some(&frames)).map_err(err)?;
    ensure(one == decompress(&m, &cont, None).map_err(err)?, || "frame-time decode differs".into())?;
    let half: Vec<f64> = (1..=2 * c.frames).map(|k| k as f64 * (c.frame_dt / 2.0)).collect();
    let two = decompress(&m, &cont, Some(&half)).map_err(err)?;
    let ch = c.channels;
    for i in 0..c.frames {
        ensure(two[(2 * i + 1) * ch..(2 * i + 2) * ch] == one[i * ch..(i + 1) * ch], || format!("2x decode differs at frame {i}"))?;
    }
    Ok(())
}

fn training_determinism() -> Result<(), String> {
    let c = tiny(ObsKind::Gaussian, 10);
    let data: Vec<Vec<f64>> = (0..6).map(|s| series(&c, s)).collect();
    let cfg = TrainConfig { iterations: 4, batch: 4, seed: 7, learning_rate: 1e-2, ..Default::default() };
    let run = |exec| -> Result<Vec<u8>, String> {
        let mut m = Model::new(c.clone(), 7).map_err(err)?;
        train(&mut m, &data, &cfg, exec, |_| {}).map_err(err)?;
        Ok(m.to_bytes())
    };
    let a = run(Execution::default())?;
    ensure(a == run(Execution::default())? && a == run(Execution::Sequential)?, || "checkpoints differ".into())
}

pub const CHECKS: &[(&str, Check)] = &[
    ("ou-identities", ou_identities),
    ("softplus-logistic-cdf", softplus_logistic_cdf),
    ("ans-exactness", ans_exactness),
    ("quantizer", quantizer),
    ("gradients", gradients),
    ("astar-times", astar_times),
    ("bits-back", bits_back),
    ("codec-pipeline", codec_pipeline),
    ("training-determinism", training_determinism),
];

/// Runs every check, printing one line each. Returns whether all passed.
pub fn run_all(print: bool) -> bool {
    let mut ok = true;
    for (name, check) in CHECKS {
        let start = Instant::now();
        let r = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        if print {
            match &r {
                Ok(()) => println!("PASS {name} ({ms} ms)"),
                Err(e) => println!("FAIL {name} ({ms} ms): {e}"),
            }
        }
        ok &= r.is_ok();
    }
    ok
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for (name, check) in super::CHECKS {
            assert_eq!(check(), Ok(()), "{name}");
        }
    }
}
