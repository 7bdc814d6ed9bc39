//! Gradient diagnostics shared by tests and `selftest`.

use super::forward::{Stage, TimesSource};
use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest relative error, with magnitudes floored at 1e-3.
    pub worst: f64,
    pub worst_param: String,
    pub probes: usize,
}

/// Compares reverse-mode gradients of the loss with central differences on
/// up to `per_tensor` entries of every tensor.
pub fn gradient_check(model: &mut Model, x: &[f64], stage: Stage, times: &[f64], seed: u64, per_tensor: usize) -> Result<GradientCheck> {
    let src = TimesSource::Given(times);
    let o = model.objective(x, stage, src, seed)?;
    let grads = o.graph.backward(o.loss);
    let mut analytic = model.store.zero_grads();
    o.graph.accumulate_param_grads(&grads, &mut analytic);
    let eval = |m: &Model| -> Result<f64> {
        let o = m.objective(x, stage, src, seed)?;
        Ok(o.graph.scalar(o.loss))
    };
    let h = 1e-5;
    let mut out = GradientCheck { worst: 0.0, worst_param: String::new(), probes: 0 };
    let ids: Vec<_> = model.store.iter().map(|(id, t)| (id, t.data.len(), t.name.clone())).collect();
    for (id, len, name) in ids {
        for j in (0..len).step_by(len.div_ceil(per_tensor.max(1)).max(1)) {
            let orig = model.store.tensor(id).data[j];
            model.store.tensor_mut(id).data[j] = orig + h;
            let up = eval(model);
            model.store.tensor_mut(id).data[j] = orig - h;
            let down = eval(model);
            model.store.tensor_mut(id).data[j] = orig;
            let num = (up? - down?) / (2.0 * h);
            let a = analytic[id.index()][j];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-3);
            if !rel.is_finite() {
                return Err(Error::Domain(format!("non-finite gradient check at {name}[{j}]")));
            }
            if rel > out.worst {
                out.worst = rel;
                out.worst_param = format!("{name}[{j}]");
            }
            out.probes += 1;
        }
    }
    Ok(out)
}

/// Names of non-point-process tensors that receive gradient from the
/// score-function surrogate, and whether the point process received any.
pub fn surrogate_leaks(model: &Model, x: &[f64], seed: u64) -> Result<(Vec<String>, bool)> {
    let o = model.objective(x, Stage::Variational, TimesSource::Sample, seed)?;
    let logq = o.logq.ok_or_else(|| Error::Domain("variational objective without log q".into()))?;
    let gq = o.graph.backward_seeded(logq, 0.37);
    let mut grads = model.store.zero_grads();
    o.graph.accumulate_param_grads(&gq, &mut grads);
    let mut leaks = Vec::new();
    let mut tpp = false;
    for ((_, t), g) in model.store.iter().zip(&grads) {
        if t.name.starts_with("tpp.") {
            tpp |= g.iter().any(|v| *v != 0.0);
        } else if g.iter().any(|v| *v != 0.0) {
            leaks.push(t.name.clone());
        }
    }
    Ok((leaks, tpp))
}
