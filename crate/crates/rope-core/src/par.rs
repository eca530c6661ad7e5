//! Row-parallel execution helpers.
//!
//! Each row of an output matrix is produced by an independent closure with a
//! fixed internal reduction order, so the parallel and sequential paths are
//! bit-identical; tests assert this.

/// Apply `f` to every `ncols`-wide row of `data`, sequentially.
pub fn for_each_row_seq(data: &mut [f64], ncols: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    data.chunks_mut(ncols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Below this many output elements the fork-join overhead dwarfs the row
/// work, so the parallel path falls back to the same sequential kernel.
const PAR_MIN_ELEMENTS: usize = 8_192;

/// Apply `f` to every `ncols`-wide row of `data`, in parallel when the
/// `parallel` feature is enabled and the matrix is large enough to pay for
/// the fork-join.
#[cfg(feature = "parallel")]
pub fn for_each_row(data: &mut [f64], ncols: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    use rayon::prelude::*;
    if data.len() < PAR_MIN_ELEMENTS {
        for_each_row_seq(data, ncols, f);
        return;
    }
    data.par_chunks_mut(ncols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_row(data: &mut [f64], ncols: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    let _ = PAR_MIN_ELEMENTS;
    for_each_row_seq(data, ncols, f);
}

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
/// Output order matches index order either way.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}
