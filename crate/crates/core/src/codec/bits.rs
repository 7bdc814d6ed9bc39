//! Bit-level I/O and Elias codes for A* indices.

use super::CodecError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `n` bits of `v`, most significant first.
    pub fn push_bits(&mut self, v: u64, n: u32) {
        for i in (0..n).rev() {
            self.push((v >> i) & 1 == 1);
        }
    }

    pub fn elias_delta(&mut self, n: u64) {
        assert!(n >= 1);
        let len = 64 - n.leading_zeros();
        let len_len = 32 - len.leading_zeros();
        for _ in 1..len_len {
            self.push(false);
        }
        self.push_bits(len as u64, len_len);
        self.push_bits(n, len - 1);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    len: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], len: usize) -> Self {
        Self { bytes, pos: 0, len: len.min(bytes.len() * 8) }
    }

    pub fn bit(&mut self) -> Result<bool, CodecError> {
        if self.pos >= self.len {
            return Err(CodecError::Truncated);
        }
        let b = self.bytes[self.pos / 8] >> (7 - self.pos % 8) & 1;
        self.pos += 1;
        Ok(b == 1)
    }

    pub fn bits(&mut self, n: u32) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u64;
        }
        Ok(v)
    }

    pub fn elias_delta(&mut self) -> Result<u64, CodecError> {
        let mut zeros = 0;
        while !self.bit()? {
            zeros += 1;
            if zeros > 6 {
                return Err(CodecError::Corrupt("Elias code too long".into()));
            }
        }
        let len = (1u64 << zeros) | self.bits(zeros)?;
        if len > 64 {
            return Err(CodecError::Corrupt("Elias code too long".into()));
        }
        Ok((1u64 << (len - 1)) | self.bits(len as u32 - 1)?)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Length in bits of the Elias delta code of `n`.
pub fn elias_delta_len(n: u64) -> usize {
    let len = 64 - n.leading_zeros();
    let len_len = 32 - len.leading_zeros();
    (2 * (len_len - 1) + len) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_codes() {
        // 1 → "1", 2 → "0100", 17 → "001010001"
        let mut w = BitWriter::new();
        w.elias_delta(1);
        w.elias_delta(2);
        w.elias_delta(17);
        assert_eq!(w.len(), 1 + 4 + 9);
        assert_eq!(elias_delta_len(17), 9);
        let n = w.len();
        let bytes = w.into_bytes();
        assert_eq!(bytes, vec![0b1010_0001, 0b0100_0100]);
        let mut r = BitReader::new(&bytes, n);
        assert_eq!(r.elias_delta().unwrap(), 1);
        assert_eq!(r.elias_delta().unwrap(), 2);
        assert_eq!(r.elias_delta().unwrap(), 17);
        assert!(r.elias_delta().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn elias_round_trip(vals in prop::collection::vec(1u64..=u64::MAX, 1..50)) {
            let mut w = BitWriter::new();
            for v in &vals {
                w.elias_delta(*v);
            }
            let total: usize = vals.iter().map(|v| elias_delta_len(*v)).sum();
            prop_assert_eq!(w.len(), total);
            let n = w.len();
            let bytes = w.into_bytes();
            let mut r = BitReader::new(&bytes, n);
            for v in &vals {
                prop_assert_eq!(r.elias_delta().unwrap(), *v);
            }
        }
    }
}
