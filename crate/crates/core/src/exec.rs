//! Execution strategy for the data-parallel inner loops (EM restarts,
//! model-order sweeps, relaxation slabs, Monte Carlo replicates).
//!
//! Every parallel path splits work into the same fixed chunks as the
//! sequential path and reduces the partial results in chunk order, so the
//! two strategies produce bit-identical output. Without the `parallel`
//! feature, [`Execution::Parallel`] silently runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by chunked reductions over long observation arrays.
pub const REDUCE_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, preserving index order in the output.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over consecutive chunks of `items`; `f` receives the chunk's
    /// starting index. Results are returned in chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_chunks(chunk).enumerate().map(|(c, s)| f(c * chunk, s)).collect();
        }
        items.chunks(chunk).enumerate().map(|(c, s)| f(c * chunk, s)).collect()
    }

    /// Applies `f` to consecutive mutable chunks; `f` receives the chunk index.
    pub fn for_each_chunk_mut<T, F>(self, items: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            items.par_chunks_mut(chunk).enumerate().for_each(|(c, s)| f(c, s));
            return;
        }
        items.chunks_mut(chunk).enumerate().for_each(|(c, s)| f(c, s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_on_chunked_sums() {
        let xs: Vec<f64> = (0..50_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        let sum =
            |e: Execution| -> f64 { e.map_chunks(&xs, REDUCE_CHUNK, |_, c| c.iter().sum::<f64>()).into_iter().sum() };
        assert_eq!(sum(Execution::Sequential).to_bits(), sum(Execution::Parallel).to_bits());
    }

    #[test]
    fn map_range_keeps_order() {
        let v = Execution::Parallel.map_range(100, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
