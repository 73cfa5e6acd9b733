//! Seeded parallel Monte Carlo over sample indices.

use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Evaluates `f` on `0..n` with `workers` threads and returns the results
/// in index order.
///
/// Indices are split into `workers` contiguous blocks up front. Each sample
/// draws only from its own streams, so the output does not depend on the
/// number of workers or on scheduling.
pub fn par_map<T, F>(workers: usize, n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || n < 2 {
        return (0..n).map(&f).collect();
    }
    let block = n.div_ceil(workers as u64);
    let ranges: Vec<(u64, u64)> = (0..workers as u64).map(|w| (w * block, ((w + 1) * block).min(n))).filter(|(a, b)| a < b).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {workers} workers: {e}")))?;
    let parts: Vec<Result<Vec<T>>> = pool.install(|| ranges.par_iter().map(|&(a, b)| (a..b).map(&f).collect()).collect());
    let mut out = Vec::with_capacity(n as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
