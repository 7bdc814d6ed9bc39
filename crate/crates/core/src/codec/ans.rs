//! Range-variant asymmetric numeral systems with a 32-bit head, 16-bit words
//! and 16-bit frequency precision.

use super::CodecError;

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
const LOWER: u64 = 1 << 16;

/// Quantized frequencies summing to `2^16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    freqs: Vec<u32>,
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn from_freqs(freqs: Vec<u32>) -> Result<Self, CodecError> {
        if freqs.iter().map(|&f| f as u64).sum::<u64>() != TOTAL as u64 || freqs.contains(&0) {
            return Err(CodecError::InvalidTable);
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for f in &freqs {
            acc += f;
            cum.push(acc);
        }
        Ok(Self { freqs, cum })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1 && n <= TOTAL as usize);
        let base = TOTAL / n as u32;
        let extra = (TOTAL % n as u32) as usize;
        Self::from_freqs((0..n).map(|i| base + u32::from(i < extra)).collect()).expect("uniform table is valid")
    }

    /// Largest-remainder rounding of `pmf` to the table total, with every
    /// symbol kept at a count of at least one. Ties go to the lower index,
    /// so both coder sides agree.
    pub fn from_pmf(pmf: &[f64]) -> Self {
        let n = pmf.len();
        assert!(n >= 1 && n <= TOTAL as usize);
        let total: f64 = pmf.iter().map(|p| p.max(0.0)).sum();
        let mut freqs = vec![0u32; n];
        let mut rema: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut used = 0i64;
        for (i, p) in pmf.iter().enumerate() {
            let share = if total > 0.0 { p.max(0.0) / total * TOTAL as f64 } else { TOTAL as f64 / n as f64 };
            let fl = share.floor();
            freqs[i] = (fl as u32).max(1);
            used += freqs[i] as i64;
            rema.push((share - fl, i));
        }
        let mut left = TOTAL as i64 - used;
        if left > 0 {
            rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in rema.iter().take(left as usize) {
                freqs[i] += 1;
            }
        }
        // the floor of one overspent the budget; take it back from the
        // largest counts
        while left < 0 {
            let i = (0..n).rev().max_by_key(|&i| freqs[i]).expect("nonempty");
            let take = ((freqs[i] - 1) as i64).min(-left).min((freqs[i] / 2).max(1) as i64);
            freqs[i] -= take as u32;
            left += take;
        }
        Self::from_freqs(freqs).expect("rounded table is valid")
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.freqs[s]
    }

    /// `−log2 P(s)` under the quantized table.
    pub fn bits(&self, s: usize) -> f64 {
        PRECISION as f64 - (self.freqs[s] as f64).log2()
    }

    fn lookup(&self, slot: u32) -> usize {
        self.cum.partition_point(|&c| c <= slot) - 1
    }
}

/// Coder state: a head in `[2^16, 2^32)` over a stack of 16-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    head: u64,
    tail: Vec<u16>,
}

impl Default for Message {
    fn default() -> Self {
        Self::new()
    }
}

impl Message {
    pub fn new() -> Self {
        Self { head: LOWER, tail: Vec::new() }
    }

    /// A message of random words, used to seed bits-back coding.
    pub fn random(words: usize, rng: &mut impl rand::Rng) -> Self {
        let head = rng.random::<u32>() as u64 | LOWER;
        Self { head, tail: (0..words).map(|_| rng.random()).collect() }
    }

    pub fn push(&mut self, table: &FreqTable, s: usize) -> Result<(), CodecError> {
        let f = *table.freqs.get(s).ok_or(CodecError::ZeroFrequency(s))? as u64;
        if f == 0 {
            return Err(CodecError::ZeroFrequency(s));
        }
        let start = table.cum[s] as u64;
        while self.head >= f << (32 - PRECISION) {
            self.tail.push(self.head as u16);
            self.head >>= 16;
        }
        self.head = ((self.head / f) << PRECISION) + self.head % f + start;
        Ok(())
    }

    pub fn pop(&mut self, table: &FreqTable) -> Result<usize, CodecError> {
        let slot = (self.head & (TOTAL as u64 - 1)) as u32;
        let s = table.lookup(slot);
        let f = table.freqs[s] as u64;
        self.head = f * (self.head >> PRECISION) + slot as u64 - table.cum[s] as u64;
        while self.head < LOWER {
            let w = self.tail.pop().ok_or(CodecError::InsufficientInitialBits)?;
            self.head = (self.head << 16) | w as u64;
        }
        Ok(s)
    }

    /// Serialized size in bits.
    pub fn bits(&self) -> usize {
        32 + 16 * self.tail.len()
    }

    /// Information content in bits, counting the head fractionally.
    pub fn content_bits(&self) -> f64 {
        (self.head as f64).log2() + 16.0 * self.tail.len() as f64
    }

    pub fn words(&self) -> usize {
        self.tail.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * self.tail.len());
        out.extend_from_slice(&(self.head as u32).to_le_bytes());
        out.extend_from_slice(&(self.tail.len() as u32).to_le_bytes());
        for w in &self.tail {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < 8 {
            return Err(CodecError::Truncated);
        }
        let head = u32::from_le_bytes(b[0..4].try_into().unwrap()) as u64;
        let n = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        if b.len() != 8 + 2 * n {
            return Err(CodecError::Truncated);
        }
        if head < LOWER {
            return Err(CodecError::Corrupt("message head out of range".into()));
        }
        let tail = b[8..].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(Self { head, tail })
    }
}
