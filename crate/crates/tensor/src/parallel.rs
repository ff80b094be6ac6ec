//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, work is spread over the rayon pool when the
//! estimated amount of work crosses [`PARALLEL_THRESHOLD`]. Every helper
//! splits work into independent pieces whose results are combined in index
//! order, so output is bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work units (roughly multiply-adds) below which we stay sequential.
pub const PARALLEL_THRESHOLD: usize = 1 << 15;

#[cfg(feature = "parallel")]
static ENABLED: AtomicBool = AtomicBool::new(true);

/// Turns the parallel kernels on or off at runtime. A no-op without the
/// `parallel` feature.
pub fn set_enabled(on: bool) {
    #[cfg(feature = "parallel")]
    ENABLED.store(on, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = on;
}

pub fn is_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

#[cfg(feature = "parallel")]
#[inline]
fn worth_it(pieces: usize, work: usize) -> bool {
    pieces > 1 && work >= PARALLEL_THRESHOLD && is_enabled()
}

/// Calls `f(i, chunk)` for each `chunk`-sized piece of `out`.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let pieces = out.len().div_ceil(chunk.max(1));
    #[cfg(feature = "parallel")]
    if worth_it(pieces, work) {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = (pieces, work);
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub(crate) fn map_collect<R, F>(n: usize, work: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if worth_it(n, work) {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..n).map(f).collect()
}
