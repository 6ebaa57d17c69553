//! Index-ordered data-parallel map with a sequential fallback.
//!
//! All batch-level parallelism in the crate goes through these helpers. Work
//! items are keyed by index and results are collected back in index order, so
//! the parallel and sequential paths produce bit-identical output; the
//! `parallel` feature and the runtime `strict` switch only affect wall-clock
//! time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, always sequentially.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Maps `f` over `0..n` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`; parallel when the feature is enabled and `strict`
/// is false.
pub fn map_indexed<R, F>(n: usize, strict: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !strict {
            return map_indexed_par(n, f);
        }
    }
    let _ = strict;
    map_indexed_seq(n, f)
}

/// Splits `0..n` into fixed-size chunks. The chunk size is independent of the
/// worker count so reductions over chunk results are reproducible.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    assert!(chunk > 0);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}
