use rayon::prelude::*;

const PARALLEL_THRESHOLD: usize = 4096;

/// Order-preserving map over `0..n`; parallel above a size threshold.
/// Reductions are left to the caller so that sums are evaluated in index
/// order whatever the thread count.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
