//! Relative entropy coding of inter-event gaps with global-bound A* search.
//!
//! Encoder and decoder share a seed. Proposals are drawn from the prior on a
//! dedicated stream, Gumbel perturbations on another, so the decoder can
//! regenerate the chosen proposal from its index alone. Gaps are coded one
//! at a time against the Poisson prior censored at the remaining time; a
//! proposal at or past the end of the interval terminates the set.

use super::bits::{BitReader, BitWriter};
use super::CodecError;
use crate::numerics::LN_2;
use crate::tpp::{prior_logp, DiscretizationSet, Exponential, GapDistribution, GapModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Proposals examined before the search gives up.
pub const MAX_STEPS: u64 = 1 << 24;

/// Slack added to a numerically located supremum of the log density ratio.
const BOUND_MARGIN: f64 = 0.01;

/// Reported REC rate estimate in bits.
pub fn rec_rate_bits(logq: f64, logp: f64) -> f64 {
    (logq - logp) / LN_2
}

/// Gumbel(0, 1) conditioned on being below `bound` (`+inf` for no bound).
pub fn truncated_gumbel(bound: f64, u: f64) -> f64 {
    -((-bound).exp() - u.ln()).ln()
}

/// A target `q` expressed relative to a proposal distribution `p`.
pub trait RecTarget {
    fn propose(&self, rng: &mut ChaCha8Rng) -> f64;
    /// `log q(x)/p(x)`; `-inf` where `q` has no mass.
    fn log_ratio(&self, x: f64) -> f64;
    /// An upper bound on `log_ratio`, or a refusal when none exists.
    fn log_bound(&self) -> Result<f64, CodecError>;
}

fn streams(seed: u64, slot: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut proposals = ChaCha8Rng::seed_from_u64(seed);
    proposals.set_stream(2 * slot);
    let mut gumbels = ChaCha8Rng::seed_from_u64(seed);
    gumbels.set_stream(2 * slot + 1);
    (proposals, gumbels)
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(f64::MIN_POSITIVE..1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AStarSample {
    /// One-based index of the selected proposal.
    pub index: u64,
    pub value: f64,
    /// Proposals examined.
    pub steps: u64,
}

/// Runs the search and returns an exact draw from the target. `bound` must
/// dominate the log density ratio, see [`RecTarget::log_bound`].
pub fn astar_encode<T: RecTarget>(target: &T, bound: f64, seed: u64, slot: u64) -> Result<AStarSample, CodecError> {
    let (mut prop, mut gum) = streams(seed, slot);
    let mut g = truncated_gumbel(f64::INFINITY, open_unit(&mut gum));
    let mut best = AStarSample { index: 0, value: f64::NAN, steps: 0 };
    let mut best_key = f64::NEG_INFINITY;
    for i in 1..=MAX_STEPS {
        let x = target.propose(&mut prop);
        let key = g + target.log_ratio(x);
        if key > best_key {
            best_key = key;
            best.index = i;
            best.value = x;
        }
        g = truncated_gumbel(g, open_unit(&mut gum));
        if best.index > 0 && best_key >= g + bound {
            best.steps = i;
            return Ok(best);
        }
    }
    Err(CodecError::AStarRefused(format!("no decision after {MAX_STEPS} proposals")))
}

/// Regenerates proposal `index` from the shared seed.
pub fn astar_decode<F>(mut propose: F, seed: u64, slot: u64, index: u64) -> Result<f64, CodecError>
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    if index == 0 || index > MAX_STEPS {
        return Err(CodecError::Corrupt(format!("A* index {index} out of range")));
    }
    let (mut prop, _) = streams(seed, slot);
    let mut x = f64::NAN;
    for _ in 0..index {
        x = propose(&mut prop);
    }
    Ok(x)
}

/// One gap of the posterior point process against the Poisson prior with
/// intensity `rate`, both censored at the end of the interval.
#[derive(Debug, Clone, Copy)]
pub struct CensoredGap<D> {
    pub q: D,
    pub rate: f64,
    pub cursor: f64,
    pub t_end: f64,
}

/// What a proposed gap means for the time set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapOutcome {
    Point(f64),
    End,
    /// Lands on the cursor after rounding; never selectable.
    Invalid,
}

/// One draw from the exponential gap law of the prior.
pub fn propose_prior(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    Exponential { rate }.sample_uniform(open_unit(rng))
}

pub fn classify_gap(cursor: f64, t_end: f64, x: f64) -> GapOutcome {
    let next = cursor + x;
    if next >= t_end {
        GapOutcome::End
    } else if next > cursor {
        GapOutcome::Point(next)
    } else {
        GapOutcome::Invalid
    }
}

impl<D: GapDistribution> CensoredGap<D> {
    pub fn remaining(&self) -> f64 {
        self.t_end - self.cursor
    }

    pub fn end_ratio(&self) -> f64 {
        let r = self.remaining();
        self.q.log_survival(r) + self.rate * r
    }

    pub fn point_ratio(&self, x: f64) -> f64 {
        self.q.logpdf(x) - self.rate.ln() + self.rate * x
    }
}

impl<D: GapDistribution> RecTarget for CensoredGap<D> {
    fn propose(&self, rng: &mut ChaCha8Rng) -> f64 {
        propose_prior(self.rate, rng)
    }

    fn log_ratio(&self, x: f64) -> f64 {
        match classify_gap(self.cursor, self.t_end, x) {
            GapOutcome::End => self.end_ratio(),
            GapOutcome::Point(_) => self.point_ratio(x),
            GapOutcome::Invalid => f64::NEG_INFINITY,
        }
    }

    fn log_bound(&self) -> Result<f64, CodecError> {
        let hi = self.remaining().min(self.q.support_max());
        let f = |x: f64| if x < hi { self.point_ratio(x) } else { f64::NEG_INFINITY };
        let sup = quantile_sup(&self.q, hi, f)?;
        Ok(sup.max(self.end_ratio()) + BOUND_MARGIN)
    }
}

/// Locates the supremum of `f` over the part of `q`'s support below `hi`,
/// scanning a quantile grid and refining the best cell by golden section.
fn quantile_sup<D: GapDistribution>(q: &D, hi: f64, f: impl Fn(f64) -> f64) -> Result<f64, CodecError> {
    const N: usize = 1000;
    const EDGE: f64 = 35.0;
    let grid: Vec<f64> = (0..=N)
        .map(|i| {
            // logit-spaced levels reach 1e-15 at both tails
            let l = -EDGE + 2.0 * EDGE * i as f64 / N as f64;
            q.sample_uniform(1.0 / (1.0 + (-l).exp())).min(hi)
        })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let (ib, &vb) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");
    if !vb.is_finite() {
        return if vb == f64::NEG_INFINITY { Ok(vb) } else { Err(refused("infinite density ratio")) };
    }
    // growth into either tail means the ratio is unbounded there
    for (edge, inner) in [(0, 15), (N, N - 15)] {
        if ib == edge && vals[edge] - vals[inner] > 0.05 {
            return Err(refused("density ratio grows without bound in the tail"));
        }
    }
    let (mut a, mut b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(N)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = vb;
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        let (fc, fd) = (f(c), f(d));
        best = best.max(fc).max(fd);
        if fc >= fd {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best)
}

fn refused(why: &str) -> CodecError {
    CodecError::AStarRefused(why.to_string())
}

/// A time set drawn by A* together with its indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedTimes {
    pub set: DiscretizationSet,
    pub indices: Vec<u64>,
    pub steps: u64,
}

/// Draws the time set gap by gap with A*, so the indices identify it.
pub fn encode_times<M: GapModel>(model: &M, lambda: f64, t_end: f64, seed: u64) -> Result<CodedTimes, CodecError> {
    let mut cursor = 0.0;
    let mut times = Vec::new();
    let mut indices = Vec::new();
    let mut log_q = 0.0;
    let mut steps = 0;
    loop {
        let gap = CensoredGap { q: model.gap_at(cursor), rate: lambda, cursor, t_end };
        let s = astar_encode(&gap, gap.log_bound()?, seed, indices.len() as u64)?;
        indices.push(s.index);
        steps += s.steps;
        match classify_gap(cursor, t_end, s.value) {
            GapOutcome::End => {
                log_q += gap.q.log_survival(t_end - cursor);
                break;
            }
            GapOutcome::Point(t) => {
                log_q += gap.q.logpdf(s.value);
                times.push(t);
                cursor = t;
            }
            GapOutcome::Invalid => return Err(refused("selected a degenerate gap")),
        }
    }
    let log_p = prior_logp(lambda, t_end, times.len());
    Ok(CodedTimes { set: DiscretizationSet { times, log_q, log_p }, indices, steps })
}

/// Rebuilds the time set from indices using only the prior and the seed.
pub fn decode_times(indices: &[u64], lambda: f64, t_end: f64, seed: u64) -> Result<Vec<f64>, CodecError> {
    let mut cursor = 0.0;
    let mut times = Vec::new();
    for (slot, &index) in indices.iter().enumerate() {
        let x = astar_decode(|r| propose_prior(lambda, r), seed, slot as u64, index)?;
        match classify_gap(cursor, t_end, x) {
            GapOutcome::End if slot + 1 == indices.len() => return Ok(times),
            GapOutcome::Point(t) => {
                times.push(t);
                cursor = t;
            }
            _ => break,
        }
    }
    Err(CodecError::Corrupt("time indices do not describe a terminated set".into()))
}

/// Elias-delta codes for a list of indices; returns bytes and bit length.
pub fn write_indices(indices: &[u64]) -> (Vec<u8>, usize) {
    let mut w = BitWriter::new();
    w.elias_delta(indices.len() as u64 + 1);
    for &i in indices {
        w.elias_delta(i);
    }
    let n = w.len();
    (w.into_bytes(), n)
}

pub fn read_indices(bytes: &[u8], bits: usize) -> Result<Vec<u64>, CodecError> {
    let mut r = BitReader::new(bytes, bits);
    let n = r.elias_delta()? - 1;
    (0..n).map(|_| r.elias_delta()).collect()
}
