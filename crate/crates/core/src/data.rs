//! Sequence datasets: synthetic generators and CSV ingestion.
//!
//! A sequence is stored frame-major, `frames × channels`. On disk a dataset
//! is a CSV whose rows are frames and whose columns are channels; sequences
//! are consecutive non-overlapping windows.

use crate::error::{Error, Result};
use crate::model::Normalization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Vec<f64>>,
    pub frames: usize,
    pub channels: usize,
    pub frame_dt: f64,
    /// Statistics the sequences were normalized with, if any.
    pub normalization: Option<Normalization>,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    SinusoidMix,
    Bounce2d,
    PiecewiseErratic,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid-mix" => Ok(Self::SinusoidMix),
            "bounce-2d" => Ok(Self::Bounce2d),
            "piecewise-erratic" => Ok(Self::PiecewiseErratic),
            _ => Err(Error::Config(format!("unknown dataset kind `{s}` (sinusoid-mix, bounce-2d, piecewise-erratic)"))),
        }
    }
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SinusoidMix => "sinusoid-mix",
            Self::Bounce2d => "bounce-2d",
            Self::PiecewiseErratic => "piecewise-erratic",
        }
    }
}

const NOISE_SD: f64 = 0.1;
const AMPLITUDE: (f64, f64) = (0.6, 1.2);
// slow and fast bands, so a mixture's two parts rarely cancel
const SLOW: (f64, f64) = (0.8, 1.6);
const FAST: (f64, f64) = (2.0, 3.2);

fn sinusoid(rng: &mut ChaCha8Rng, band: (f64, f64)) -> impl Fn(f64) -> f64 {
    let a = rng.random_range(AMPLITUDE.0..AMPLITUDE.1);
    let w = rng.random_range(band.0..band.1);
    let p = rng.random_range(0.0..std::f64::consts::TAU);
    move |t| a * (w * t + p).sin()
}

/// Folds the real line onto [0, 1] like a point bouncing between walls.
fn reflect(u: f64) -> f64 {
    1.0 - ((u.rem_euclid(2.0)) - 1.0).abs()
}

/// Generates `n` sequences; `channels` is ignored for `bounce-2d`.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, frames: usize, channels: usize, frame_dt: f64, seed: u64) -> Result<SequenceDataset> {
    if n < 1 || frames < 2 || channels < 1 || !(frame_dt > 0.0) {
        return Err(Error::Config("need n >= 1, frames >= 2, channels >= 1 and a positive frame spacing".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let t_end = frames as f64 * frame_dt;
    let channels = if kind == SyntheticKind::Bounce2d { 2 } else { channels };
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let mut seq = vec![0.0; frames * channels];
        for c in 0..channels {
            let col: Box<dyn Fn(f64) -> f64> = match kind {
                SyntheticKind::SinusoidMix => {
                    let (f, g) = (sinusoid(&mut rng, SLOW), sinusoid(&mut rng, FAST));
                    Box::new(move |t| f(t) + g(t))
                }
                SyntheticKind::Bounce2d => {
                    let x0 = rng.random_range(0.0..1.0);
                    let v = rng.random_range(0.1..0.4) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                    // unfold the start so the fold reproduces it
                    Box::new(move |t| reflect(x0 + v * t))
                }
                SyntheticKind::PiecewiseErratic => {
                    let f = sinusoid(&mut rng, SLOW);
                    let mut jumps: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..t_end), rng.sample::<f64, _>(rand_distr::StandardNormal))).collect();
                    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Box::new(move |t| f(t) + jumps.iter().filter(|(at, _)| *at <= t).map(|(_, h)| h).sum::<f64>())
                }
            };
            for i in 0..frames {
                let t = (i + 1) as f64 * frame_dt;
                let e = if kind == SyntheticKind::Bounce2d { 0.0 } else { noise.sample(&mut rng) };
                seq[i * channels + c] = col(t) + e;
            }
        }
        sequences.push(seq);
    }
    Ok(SequenceDataset { sequences, frames, channels, frame_dt, normalization: None, source: format!("{}(seed={seed})", kind.name()) })
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads a rectangular numeric CSV and cuts it into windows of `frames`
/// rows. A first row without any numeric cell is taken as a header.
pub fn ingest_csv(path: &Path, frames: usize, frame_dt: f64) -> Result<SequenceDataset> {
    let file = std::fs::File::open(path)?;
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| parse_error(e.position().map_or(i + 1, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_error(line, format!("column {}: `{c}` is not a finite number", j + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(parse_error(line, format!("expected {w} columns, found {}", row.len()))),
            _ => {}
        }
        rows.push(row);
    }
    let channels = width.ok_or_else(|| parse_error(1, "no data rows"))?;
    if frames < 2 || rows.len() < frames {
        return Err(Error::Config(format!("{} rows cannot fill a window of {frames} frames", rows.len())));
    }
    let sequences = rows.chunks_exact(frames).map(|w| w.concat()).collect();
    Ok(SequenceDataset { sequences, frames, channels, frame_dt, normalization: None, source: path.display().to_string() })
}

impl SequenceDataset {
    /// Per-channel mean and standard deviation over all frames.
    pub fn stats(&self) -> Result<Normalization> {
        let c = self.channels;
        let n = (self.sequences.len() * self.frames) as f64;
        let mut mean = vec![0.0; c];
        for s in &self.sequences {
            for (i, v) in s.iter().enumerate() {
                mean[i % c] += v / n;
            }
        }
        let mut var = vec![0.0; c];
        for s in &self.sequences {
            for (i, v) in s.iter().enumerate() {
                var[i % c] += (v - mean[i % c]).powi(2) / n;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        if let Some(j) = std.iter().position(|s| !(*s > 1e-12 * (1.0 + mean.iter().map(|m| m.abs()).fold(0.0, f64::max)))) {
            return Err(Error::Domain(format!("zero variance channel {j}")));
        }
        Ok(Normalization { mean, std })
    }

    /// Applies `norm` to every sequence and records it.
    pub fn normalize_with(&mut self, norm: &Normalization) -> Result<()> {
        if self.normalization.is_some() {
            return Err(Error::Config("dataset is already normalized".into()));
        }
        if norm.mean.len() != self.channels {
            return Err(Error::Config(format!("normalization has {} channels, data has {}", norm.mean.len(), self.channels)));
        }
        self.sequences.iter_mut().for_each(|s| norm.apply(s));
        self.normalization = Some(norm.clone());
        Ok(())
    }

    /// Z-normalizes every channel with the dataset's own statistics.
    pub fn normalize(&mut self) -> Result<Normalization> {
        let norm = self.stats()?;
        self.normalize_with(&norm)?;
        Ok(norm)
    }

    /// Maps each channel affinely onto 0..=255 and rounds, for lossless
    /// coding with an 8-bit decoder.
    pub fn to_bytes(&mut self) {
        let c = self.channels;
        let mut lo = vec![f64::INFINITY; c];
        let mut hi = vec![f64::NEG_INFINITY; c];
        for s in &self.sequences {
            for (i, v) in s.iter().enumerate() {
                lo[i % c] = lo[i % c].min(*v);
                hi[i % c] = hi[i % c].max(*v);
            }
        }
        for s in &mut self.sequences {
            for (i, v) in s.iter_mut().enumerate() {
                let span = (hi[i % c] - lo[i % c]).max(f64::MIN_POSITIVE);
                *v = ((*v - lo[i % c]) / span * 255.0).round();
            }
        }
        self.normalization = None;
    }

    /// Writes all sequences back to back, one frame per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_frames(path, self.channels, self.sequences.iter().map(|s| &s[..]))
    }
}

/// Writes frame-major rows with a `c0,c1,…` header.
pub fn write_frames<'a>(path: &Path, channels: usize, seqs: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record((0..channels).map(|c| format!("c{c}"))).map_err(csv_io)?;
    for s in seqs {
        for row in s.chunks(channels) {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        k => Error::Io(std::io::Error::other(format!("{k:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn generators_are_seed_deterministic() {
        for kind in [SyntheticKind::SinusoidMix, SyntheticKind::Bounce2d, SyntheticKind::PiecewiseErratic] {
            let a = gen_synthetic(kind, 3, 50, 4, 0.1, 7).unwrap();
            assert_eq!(a, gen_synthetic(kind, 3, 50, 4, 0.1, 7).unwrap());
            assert_ne!(a.sequences, gen_synthetic(kind, 3, 50, 4, 0.1, 8).unwrap().sequences);
        }
    }

    #[test]
    fn sinusoid_mix_variance_range() {
        let d = gen_synthetic(SyntheticKind::SinusoidMix, 1000, 100, 1, 0.1, 1).unwrap();
        let vars: Vec<f64> = d
            .sequences
            .iter()
            .map(|s| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64
            })
            .collect();
        // independent oracle: E[var] = E[a²] + σ² with a ~ U(0.6, 1.2)
        let ea2 = (1.2f64.powi(3) - 0.6f64.powi(3)) / (3.0 * 0.6);
        let mean = vars.iter().sum::<f64>() / vars.len() as f64;
        assert!((mean - (ea2 + 0.01)).abs() < 0.05, "{mean} vs {}", ea2 + 0.01);
        let inside = vars.iter().filter(|v| (0.3..=2.5).contains(*v)).count();
        assert!(inside >= 970, "{inside}");
    }

    #[test]
    fn bounce_stays_in_the_box() {
        let d = gen_synthetic(SyntheticKind::Bounce2d, 50, 200, 7, 0.1, 3).unwrap();
        assert_eq!(d.channels, 2);
        assert!(d.sequences.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(reflect(1.25), 0.75);
        assert_eq!(reflect(-0.25), 0.25);
    }

    #[test]
    fn erratic_has_jumps() {
        let d = gen_synthetic(SyntheticKind::PiecewiseErratic, 20, 100, 1, 0.1, 4).unwrap();
        // the largest step should exceed what noise and the sinusoid produce
        let big = d.sequences.iter().filter(|s| s.windows(2).any(|w| (w[1] - w[0]).abs() > 0.8)).count();
        assert!(big >= 10, "{big}");
    }

    #[test]
    fn csv_windowing() {
        let mut text = String::from("a,b,c,d\n");
        for i in 0..205 {
            text += &format!("{i},{},{},{}\n", i * 2, -i, i % 7);
        }
        let f = write_tmp(&text);
        let d = ingest_csv(f.path(), 100, 0.1).unwrap();
        assert_eq!((d.sequences.len(), d.channels), (2, 4));
        assert_eq!(d.sequences[1].len(), 400);
        assert_eq!(d.sequences[1][..4], [100.0, 200.0, -100.0, 2.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp("x,y\n1,2\n3,oops\n");
        match ingest_csv(f.path(), 2, 0.1).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let f = write_tmp("1,2\n3,4\n5\n");
        match ingest_csv(f.path(), 2, 0.1).unwrap_err() {
            Error::Parse { line, message } => assert_eq!((line, message.contains("columns")), (3, true)),
            e => panic!("{e}"),
        }
        let f = write_tmp("1,2\n");
        assert!(ingest_csv(f.path(), 2, 0.1).is_err());
    }

    #[test]
    fn constant_column_is_rejected() {
        let f = write_tmp("1,5\n2,5\n3,5\n4,5\n");
        let mut d = ingest_csv(f.path(), 2, 0.1).unwrap();
        let e = d.normalize().unwrap_err();
        assert!(e.to_string().contains("zero variance channel"), "{e}");
    }

    #[test]
    fn normalization_round_trip() {
        let mut d = gen_synthetic(SyntheticKind::PiecewiseErratic, 8, 30, 3, 0.1, 2).unwrap();
        let raw = d.clone();
        let norm = d.normalize().unwrap();
        let after = d.stats().unwrap();
        assert!(after.mean.iter().all(|m| m.abs() < 1e-6));
        assert!(after.std.iter().all(|s| (s - 1.0).abs() < 1e-6));
        for (a, b) in d.sequences.iter().zip(&raw.sequences) {
            let mut back = a.clone();
            norm.invert(&mut back);
            assert!(back.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs())));
        }
        assert!(d.normalize().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = gen_synthetic(SyntheticKind::SinusoidMix, 3, 20, 2, 0.1, 9).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path()).unwrap();
        let back = ingest_csv(f.path(), 20, 0.1).unwrap();
        assert_eq!(back.sequences, d.sequences);
    }

    #[test]
    fn byte_scaling() {
        let mut d = gen_synthetic(SyntheticKind::SinusoidMix, 4, 20, 2, 0.1, 9).unwrap();
        d.to_bytes();
        let all: Vec<f64> = d.sequences.concat();
        assert!(all.iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        assert!(all.contains(&0.0) && all.contains(&255.0));
    }
}
