//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split by index and results are returned in index order, so
//! reductions performed by the caller are deterministic regardless of how many
//! threads ran the closures.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Like [`map_range`] over the items of a slice.
pub fn map_slice<I, T, F>(exec: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}

/// Monte-Carlo mean and standard error of `f` over `n` independent draws,
/// evaluated in chunks so that each chunk owns its random stream.
pub fn mc_mean<F>(exec: Execution, n: usize, chunks: usize, f: F) -> (f64, f64)
where
    F: Fn(usize, usize) -> Vec<f64> + Sync + Send,
{
    let chunks = chunks.max(1).min(n.max(1));
    let per = n.div_ceil(chunks);
    let parts = map_range(exec, chunks, |c| {
        let start = c * per;
        let end = ((c + 1) * per).min(n);
        f(c, end.saturating_sub(start))
    });
    let values: Vec<f64> = parts.into_iter().flatten().collect();
    mean_se(&values)
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
