//! Deterministic data-parallel batch evaluation.
//!
//! Every batched quantity in this crate (risk values, loss gradients, grid
//! scans) is a sum of independent per-item terms. To keep results bit-identical
//! regardless of thread count, items are folded inside fixed-size chunks in
//! index order and the per-chunk partials are merged in chunk order. Only the
//! map over chunks runs on the rayon pool; the arithmetic sequence is the same
//! in the parallel and sequential builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items folded per chunk. Fixed so the reduction tree does not depend on the
/// number of worker threads.
pub const CHUNK: usize = 16;

/// Fold `items` chunk by chunk and merge the partials in chunk order.
///
/// `fold` must be pure; `merge` is applied left-to-right over the chunk
/// results. Runs on the rayon pool when the `parallel` feature is enabled.
pub fn chunked_fold<T, A>(
    items: &[T],
    init: impl Fn() -> A + Sync + Send,
    fold: impl Fn(A, &T) -> A + Sync + Send,
    merge: impl Fn(A, A) -> A,
) -> A
where
    T: Sync,
    A: Send,
{
    #[cfg(feature = "parallel")]
    let partials: Vec<A> = items
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().fold(init(), &fold))
        .collect();

    #[cfg(not(feature = "parallel"))]
    let partials: Vec<A> = items
        .chunks(CHUNK)
        .map(|chunk| chunk.iter().fold(init(), &fold))
        .collect();

    let mut out = init();
    for p in partials {
        out = merge(out, p);
    }
    out
}

/// Sequential twin of [`chunked_fold`]: same chunking, same merge order, no
/// thread pool. Exists so benchmarks and equality tests can compare the two
/// paths inside one binary.
pub fn chunked_fold_seq<T, A>(
    items: &[T],
    init: impl Fn() -> A,
    fold: impl Fn(A, &T) -> A,
    merge: impl Fn(A, A) -> A,
) -> A {
    let mut out = init();
    for chunk in items.chunks(CHUNK) {
        let partial = chunk.iter().fold(init(), &fold);
        out = merge(out, partial);
    }
    out
}

/// Map `items` to a vector, preserving order. Parallel when the feature is on.
pub fn map_collect<T, R>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential twin of [`map_collect`].
pub fn map_collect_seq<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}
