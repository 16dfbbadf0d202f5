//! Data-parallel loops over chains and batch chunks.
//!
//! With the `parallel` feature (default) these run on the rayon pool; without
//! it they are plain sequential loops. Results never depend on which is used
//! or on the worker count: every chain owns its own stream, and reductions are
//! computed per fixed-size chunk and then folded in chunk order.

use std::ops::Range;

use crate::rng::RngStream;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build runs ensembles on the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Run `f` on every chain: its index, its state row of length `dim`, and its stream.
pub fn for_each_chain<F>(states: &mut [f64], dim: usize, rngs: &mut [RngStream], f: F)
where
    F: Fn(usize, &mut [f64], &mut RngStream) + Sync + Send,
{
    debug_assert_eq!(states.len(), dim * rngs.len());
    #[cfg(feature = "parallel")]
    states
        .par_chunks_mut(dim)
        .zip(rngs.par_iter_mut())
        .enumerate()
        .for_each(|(i, (x, rng))| f(i, x, rng));
    #[cfg(not(feature = "parallel"))]
    states
        .chunks_mut(dim)
        .zip(rngs.iter_mut())
        .enumerate()
        .for_each(|(i, (x, rng))| f(i, x, rng));
}

/// Like [`for_each_chain`] for deterministic updates that need no randomness.
pub fn for_each_row<F>(states: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    states.par_chunks_mut(dim).enumerate().for_each(|(i, x)| f(i, x));
    #[cfg(not(feature = "parallel"))]
    states.chunks_mut(dim).enumerate().for_each(|(i, x)| f(i, x));
}

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Split `0..n` into chunks of `chunk` items, map each chunk (possibly in
/// parallel) and fold the chunk results left to right.
pub fn chunked_reduce<T, M, R>(n: usize, chunk: usize, map: M, init: T, reduce: R) -> T
where
    T: Send,
    M: Fn(Range<usize>) -> T + Sync + Send,
    R: Fn(T, T) -> T,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let parts = map_indexed(n_chunks, |c| map(c * chunk..((c + 1) * chunk).min(n)));
    parts.into_iter().fold(init, reduce)
}
