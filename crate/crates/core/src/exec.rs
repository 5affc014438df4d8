//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on the
//! rayon global pool; without it every call runs sequentially. Results are
//! always returned in index order and integer counts are merged by addition,
//! so output does not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Splits `0..total` into chunks, runs `f(start, end)` on each and sums the
/// returned count vectors element-wise.
pub fn sum_counts<F, E>(exec: Execution, total: u64, chunk: u64, width: usize, f: F) -> Result<Vec<u64>, E>
where
    F: Fn(u64, u64) -> Result<Vec<u64>, E> + Sync + Send,
    E: Send,
{
    let chunk = chunk.max(1);
    let n_chunks = total.div_ceil(chunk) as usize;
    let run = |k: usize| {
        let start = k as u64 * chunk;
        f(start, (start + chunk).min(total))
    };
    let parts: Vec<Result<Vec<u64>, E>> = map_indexed(exec, n_chunks, run);
    let mut acc = vec![0u64; width];
    for part in parts {
        for (a, b) in acc.iter_mut().zip(part?) {
            *a += b;
        }
    }
    Ok(acc)
}
