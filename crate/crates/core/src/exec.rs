//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) the loops below fan out over rayon;
//! without it they fall back to the sequential bodies. Every helper writes
//! disjoint output chunks only, so results are bit-identical regardless of
//! thread count. Reductions (quadratures, norms) stay sequential on purpose.

/// Run `f` on a rayon pool with `threads` workers (0 = rayon default).
/// Without the `parallel` feature the closure just runs on this thread.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("rayon pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Apply `body` to every chunk of exactly `chunk` elements, sequentially.
pub fn chunks_mut_seq<T, F>(data: &mut [T], chunk: usize, body: F)
where
    F: Fn(usize, &mut [T]) + Sync,
    T: Send,
{
    for (idx, slab) in data.chunks_mut(chunk).enumerate() {
        body(idx, slab);
    }
}

/// Parallel version of [`chunks_mut_seq`]; same output for the same input.
#[cfg(feature = "parallel")]
pub fn chunks_mut<T, F>(data: &mut [T], chunk: usize, body: F)
where
    F: Fn(usize, &mut [T]) + Sync,
    T: Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(idx, slab)| body(idx, slab));
}

#[cfg(not(feature = "parallel"))]
pub fn chunks_mut<T, F>(data: &mut [T], chunk: usize, body: F)
where
    F: Fn(usize, &mut [T]) + Sync,
    T: Send,
{
    chunks_mut_seq(data, chunk, body)
}

/// Populate `out[i]` with `f(i)` for each index, sequentially.
pub fn fill_indexed_seq<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Parallel version of [`fill_indexed_seq`].
#[cfg(feature = "parallel")]
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    use rayon::prelude::*;
    out.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = f(i));
}

#[cfg(not(feature = "parallel"))]
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    fill_indexed_seq(out, f)
}

/// Map every index in `0..n` to a value, collecting results in order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
    T: Send + Default + Clone,
{
    let mut out = vec![T::default(); n];
    fill_indexed(&mut out, f);
    out
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
    T: Send + Default + Clone,
{
    let mut out = vec![T::default(); n];
    fill_indexed_seq(&mut out, f);
    out
}
