//! Thin switch between rayon-backed and sequential index maps.
//!
//! With the `parallel` feature disabled every call runs sequentially and the
//! `parallel` flag is ignored. Results are collected in index order either
//! way, so outputs are identical bit for bit across both paths.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(parallel: bool, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(_parallel: bool, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
