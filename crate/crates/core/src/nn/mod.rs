//! Minimal neural-network substrate: a reverse-mode tape, dense layers, a
//! bidirectional GRU, Adam and score-function gradients.

pub mod adam;
pub mod graph;
pub mod layers;
pub mod params;
pub mod reinforce;

pub use adam::Adam;
pub use graph::{Grads, Graph, Var};
pub use layers::{BiGru, Mlp};
pub use params::{ParamId, ParamStore, Tensor};
pub use reinforce::reinforce_coefficients;
