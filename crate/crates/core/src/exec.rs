//! Sample-level data parallelism.
//!
//! Every batched operator splits its work per sample and merges the per-sample
//! results in sample order, so `Sequential` and `Parallel` produce bitwise
//! identical values for any worker count. Without the `parallel` feature the
//! `Parallel` mode silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly spread over the rayon pool.
pub(crate) fn map<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `f(index, chunk)` over `chunk`-sized pieces of `data` and collects the results.
pub(crate) fn map_chunks_mut<T, F>(exec: Execution, data: &mut [f64], chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync + Send,
{
    if chunk == 0 {
        return Vec::new();
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

pub(crate) fn for_each_chunk_mut<F>(exec: Execution, data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let _: Vec<()> = map_chunks_mut(exec, data, chunk, f);
}

/// Sums equally sized buffers in index order.
pub(crate) fn sum_in_order<'a>(parts: impl IntoIterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for part in parts {
        debug_assert_eq!(part.len(), len);
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}
