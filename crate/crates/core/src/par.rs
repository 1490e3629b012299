//! Row-parallel execution helpers.
//!
//! With the `parallel` feature the helpers fan rows out over the rayon pool;
//! without it they run the same closures sequentially. Each output row is
//! always produced by one sequential loop, so results are bit-identical for
//! any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements the sequential path is used.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

/// Applies `f(row_index, row)` to each `cols`-wide row of `data`.
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() >= PAR_THRESHOLD {
            data.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    data.chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Elementwise map `out[i] = f(i)` over a freshly allocated buffer.
pub fn map_indexed<F>(len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= PAR_THRESHOLD {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Maps independent jobs (seeds, grid points, Monte-Carlo chunks) and
/// collects results in input order.
pub fn map_jobs<T, R, F>(jobs: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        jobs.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
