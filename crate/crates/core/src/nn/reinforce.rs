//! Score-function gradients for the sampled discretization.
//!
//! Each sequence contributes `c_b · log q_b` to its graph, where `c_b` is a
//! detached coefficient. With the leave-one-out baseline
//! `c_b = (L_b − mean_{b' ≠ b} L_b') / B`, the estimator stays unbiased.

use super::graph::{Graph, Var};

/// Per-sequence surrogate coefficients for detached losses `losses`.
pub fn reinforce_coefficients(losses: &[f64]) -> Vec<f64> {
    let b = losses.len();
    if b == 0 {
        return Vec::new();
    }
    if b == 1 {
        log::warn!("batch of one: REINFORCE runs without a baseline");
        return vec![losses[0]];
    }
    let total: f64 = losses.iter().sum();
    let bf = b as f64;
    losses
        .iter()
        .map(|l| {
            let others = (total - l) / (bf - 1.0);
            (l - others) / bf
        })
        .collect()
}

/// Adds `coeff · logq` to the graph and returns the new scalar.
pub fn surrogate(g: &mut Graph, logq: Var, coeff: f64) -> Var {
    g.scale(logq, coeff)
}
