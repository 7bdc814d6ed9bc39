//! Self-describing container for one compressed sequence.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CTSQ" | version u8 | mode u8 | flags u8 | times_mode u8
//! model_hash u64 | lambda f64 | frame_dt f64 | frames u32 | points u32
//! precision u32 | seed u64
//! times_len u32 | times block | payload_len u32 | payload
//! ```
//!
//! The times block holds `points` raw f64 values, or a u32 bit count
//! followed by the Elias-delta A* indices, or nothing when every frame is a
//! knot. The payload is the serialized ANS message.

use super::CodecError;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

pub const MAGIC: &[u8; 4] = b"CTSQ";
pub const VERSION: u8 = 1;
const FLAG_PRUNED: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lossy,
    Lossless,
}

/// How the discretization times are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimesMode {
    /// Raw f64 values; the reported time rate is the REC estimate.
    #[serde(rename = "raw")]
    Raw,
    /// A* indices that the decoder replays from the shared seed.
    #[serde(rename = "astar")]
    AStar,
    /// Knots at every frame, nothing stored.
    #[serde(rename = "frames")]
    AllFrames,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lossy" => Ok(Mode::Lossy),
            "lossless" => Ok(Mode::Lossless),
            _ => Err(format!("unknown mode `{s}` (lossy, lossless)")),
        }
    }
}

impl FromStr for TimesMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(TimesMode::Raw),
            "astar" => Ok(TimesMode::AStar),
            "frames" => Ok(TimesMode::AllFrames),
            _ => Err(format!("unknown times coding `{s}` (raw, astar, frames)")),
        }
    }
}

impl TimesMode {
    pub fn name(self) -> &'static str {
        match self {
            TimesMode::Raw => "raw",
            TimesMode::AStar => "astar",
            TimesMode::AllFrames => "frames",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimesBlock {
    Raw(Vec<f64>),
    AStar { bits: usize, bytes: Vec<u8> },
    AllFrames,
}

impl TimesBlock {
    pub fn mode(&self) -> TimesMode {
        match self {
            TimesBlock::Raw(_) => TimesMode::Raw,
            TimesBlock::AStar { .. } => TimesMode::AStar,
            TimesBlock::AllFrames => TimesMode::AllFrames,
        }
    }

    /// Bits the block occupies on disk, excluding its length prefix.
    pub fn stored_bits(&self) -> usize {
        match self {
            TimesBlock::Raw(t) => 64 * t.len(),
            TimesBlock::AStar { bits, .. } => *bits,
            TimesBlock::AllFrames => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub mode: Mode,
    pub pruned: bool,
    pub model_hash: u64,
    pub lambda: f64,
    pub frame_dt: f64,
    pub frames: u32,
    pub points: u32,
    pub precision: u32,
    pub seed: u64,
    pub times: TimesBlock,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + self.payload.len());
        b.extend_from_slice(MAGIC);
        let mode = match self.mode {
            Mode::Lossy => 0u8,
            Mode::Lossless => 1,
        };
        let times_mode = match self.times.mode() {
            TimesMode::Raw => 0u8,
            TimesMode::AStar => 1,
            TimesMode::AllFrames => 2,
        };
        b.extend_from_slice(&[VERSION, mode, if self.pruned { FLAG_PRUNED } else { 0 }, times_mode]);
        b.extend_from_slice(&self.model_hash.to_le_bytes());
        b.extend_from_slice(&self.lambda.to_le_bytes());
        b.extend_from_slice(&self.frame_dt.to_le_bytes());
        b.extend_from_slice(&self.frames.to_le_bytes());
        b.extend_from_slice(&self.points.to_le_bytes());
        b.extend_from_slice(&self.precision.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        let times: Vec<u8> = match &self.times {
            TimesBlock::Raw(t) => t.iter().flat_map(|v| v.to_le_bytes()).collect(),
            TimesBlock::AStar { bits, bytes } => (*bits as u32).to_le_bytes().into_iter().chain(bytes.iter().copied()).collect(),
            TimesBlock::AllFrames => Vec::new(),
        };
        b.extend_from_slice(&(times.len() as u32).to_le_bytes());
        b.extend_from_slice(&times);
        b.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        b.extend_from_slice(&self.payload);
        b
    }

    /// Parses one container and returns it with the number of bytes read.
    pub fn from_bytes(b: &[u8]) -> Result<(Self, usize), CodecError> {
        let mut r = Reader { b, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CodecError::BadMagic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let mode = match r.u8()? {
            0 => Mode::Lossy,
            1 => Mode::Lossless,
            m => return Err(CodecError::Corrupt(format!("unknown mode {m}"))),
        };
        let flags = r.u8()?;
        if flags & !FLAG_PRUNED != 0 {
            return Err(CodecError::Corrupt(format!("unknown flags {flags:#x}")));
        }
        let times_mode = r.u8()?;
        let model_hash = r.u64()?;
        let lambda = r.f64()?;
        let frame_dt = r.f64()?;
        let frames = r.u32()?;
        let points = r.u32()?;
        let precision = r.u32()?;
        let seed = r.u64()?;
        let tlen = r.u32()? as usize;
        let tb = r.take(tlen)?;
        let times = match times_mode {
            0 => {
                if tlen != 8 * points as usize {
                    return Err(CodecError::Corrupt("raw times block does not match the point count".into()));
                }
                TimesBlock::Raw(tb.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            1 => {
                if tlen < 4 {
                    return Err(CodecError::Truncated);
                }
                let bits = u32::from_le_bytes(tb[..4].try_into().unwrap()) as usize;
                if bits > 8 * (tlen - 4) {
                    return Err(CodecError::Truncated);
                }
                TimesBlock::AStar { bits, bytes: tb[4..].to_vec() }
            }
            2 if tlen == 0 => TimesBlock::AllFrames,
            m => return Err(CodecError::Corrupt(format!("bad times block (mode {m}, {tlen} bytes)"))),
        };
        let plen = r.u32()? as usize;
        let payload = r.take(plen)?.to_vec();
        let c = Container { mode, pruned: flags & FLAG_PRUNED != 0, model_hash, lambda, frame_dt, frames, points, precision, seed, times, payload };
        Ok((c, r.pos))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or(CodecError::Truncated)?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Concatenates containers into one stream.
pub fn write_stream(containers: &[Container]) -> Vec<u8> {
    containers.iter().flat_map(|c| c.to_bytes()).collect()
}

pub fn read_stream(mut b: &[u8]) -> Result<Vec<Container>, CodecError> {
    let mut out = Vec::new();
    while !b.is_empty() {
        let (c, n) = Container::from_bytes(b)?;
        out.push(c);
        b = &b[n..];
    }
    Ok(out)
}
