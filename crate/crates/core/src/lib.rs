//! Continuous-time sequence compression.
//!
//! Sequences are encoded into a latent stochastic process with an
//! Ornstein–Uhlenbeck prior. A learned point process picks the times at which
//! the latent path is stored; everything between those knots is recovered by
//! linear interpolation and decoded on demand at any time.

pub mod data;
pub mod error;
pub mod exec;
pub mod interp;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod ou_prior;
pub mod rd;
pub mod sde_sim;
pub mod selftest;
pub mod stats;
pub mod tpp;

pub mod cli;
pub mod codec;

pub use error::{Error, Result};
