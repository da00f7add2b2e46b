//! Data-parallel execution helpers with a sequential fallback.
//!
//! Everything here is engineered so that results are bit-identical no matter
//! how many worker threads run: parallel maps collect into index order, and
//! accumulations are split into fixed-size chunks that are merged in chunk
//! order rather than completion order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Configure the global worker pool size. Returns false when the build has no
/// parallel support or a pool already exists.
pub fn configure_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Map `f` over `0..n`, collecting results in index order. Runs on the rayon
/// pool when the `parallel` feature is enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`], kept available in every build so the
/// benchmark suite can compare both paths.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
