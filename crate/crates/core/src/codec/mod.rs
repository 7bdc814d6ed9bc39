//! Entropy coding backend: quantizer, rANS, latent and bits-back coders,
//! A* coding of discretization gaps, and the container format.

pub mod ans;
pub mod astar;
pub mod bitsback;
pub mod bits;
pub mod container;
pub mod latents;
pub mod pipeline;
pub mod quantizer;

pub use ans::{FreqTable, Message};
pub use quantizer::Quantizer;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("symbol {0} has zero frequency")]
    ZeroFrequency(usize),
    #[error("frequency table must sum to 2^16 with every entry >= 1")]
    InvalidTable,
    #[error("message ran out of words; the initial message needs more bits")]
    InsufficientInitialBits,
    #[error("not a compressed container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("container was produced by model {found:016x}, loaded model is {expected:016x}")]
    ModelMismatch { expected: u64, found: u64 },
    #[error("container is truncated")]
    Truncated,
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("A* coding refused: {0}")]
    AStarRefused(String),
}
