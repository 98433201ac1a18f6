//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel path produces results in input order and reduces partial
//! sums sequentially over fixed-size chunks, so `Sequential` and `Parallel`
//! return bit-identical values regardless of the thread count. Without the
//! `parallel` feature, `Exec::Parallel` silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`Exec::chunked_sum`]. Fixed so the floating-point
/// reduction tree never depends on the number of worker threads.
pub const REDUCTION_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this policy actually fans out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f).collect()`, possibly in parallel, preserving order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Order-preserving fallible map; returns the first error by index.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    /// Sums per-chunk accumulators built by `fold` over `[0, n)`.
    ///
    /// `fold(range, acc)` adds the contribution of every index in `range`
    /// into `acc`; `add(total, part)` merges one chunk's accumulator.
    pub fn chunked_sum<A, Z, F, M>(self, n: usize, zero: Z, fold: F, mut add: M) -> A
    where
        A: Send,
        Z: Fn() -> A + Sync + Send,
        F: Fn(std::ops::Range<usize>, &mut A) + Sync + Send,
        M: FnMut(&mut A, A),
    {
        let chunks = n.div_ceil(REDUCTION_CHUNK);
        let parts = self.map(chunks, |c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(n);
            let mut acc = zero();
            fold(lo..hi, &mut acc);
            acc
        });
        let mut total = zero();
        for part in parts {
            add(&mut total, part);
        }
        total
    }
}
