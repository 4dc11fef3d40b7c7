//! Deterministic chunked execution.
//!
//! Batch work is split into fixed-size chunks; chunk results are collected and
//! folded in chunk order. Chunk boundaries depend only on the chunk size, so
//! floating-point reductions are bit-identical regardless of thread count and
//! of whether the `parallel` feature is compiled in.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use std::ops::Range;

/// Chunk size used by the built-in batch loops.
pub const DEFAULT_CHUNK: usize = 256;

/// Execution mode for chunked loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    Auto,
    /// Always sequential, regardless of features.
    Sequential,
}

/// Applies `f` to consecutive index ranges of `0..n` and returns the results
/// in range order.
pub fn map_ranges<A, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(n))
        .collect();
    match exec {
        Exec::Sequential => ranges.into_iter().map(f).collect(),
        Exec::Auto => map_auto(ranges, f),
    }
}

/// Applies `f` to consecutive chunks of `items` and returns the results in
/// chunk order. `f` receives the index of the first element of its chunk.
pub fn map_chunks<T, A, F>(exec: Exec, items: &[T], chunk: usize, f: F) -> Vec<A>
where
    T: Sync,
    A: Send,
    F: Fn(usize, &[T]) -> A + Sync + Send,
{
    map_ranges(exec, items.len(), chunk, |r| f(r.start, &items[r.clone()]))
}

#[cfg(feature = "parallel")]
fn map_auto<A, F>(ranges: Vec<Range<usize>>, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    ranges.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_auto<A, F>(ranges: Vec<Range<usize>>, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
{
    ranges.into_iter().map(f).collect()
}

/// Derives an independent stream seed from a base seed and a tag
/// (splitmix64-style finalizer). Used for per-record and per-epoch RNG streams
/// so that results do not depend on sharding.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
