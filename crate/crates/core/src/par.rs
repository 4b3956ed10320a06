//! Indexed fan-out with a sequential fallback.
//!
//! Work is always split into the same fixed chunks and results are gathered
//! in index order, so the floating-point reduction tree does not depend on
//! how many workers ran it.

/// Number of items folded sequentially before partial results are combined.
pub const CHUNK: usize = 64;

/// Worker count for data-parallel stages. `0` means "rayon default",
/// `1` forces the sequential path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Workers(pub usize);

impl Workers {
    pub const SEQUENTIAL: Workers = Workers(1);

    pub fn is_sequential(self) -> bool {
        self.0 == 1 || !cfg!(feature = "parallel")
    }
}

/// `(0..n).map(f).collect()`, possibly on a thread pool.
pub fn map_indexed<T, F>(n: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers.is_sequential() || n <= 1 {
        return (0..n).map(f).collect();
    }
    parallel_map(n, workers, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    if workers.0 == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.0)
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => (0..n).map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, _workers: Workers, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Folds items `0..n` in fixed chunks of [`CHUNK`], then merges the chunk
/// accumulators left to right.
pub fn chunked_fold<A, Init, Step, Merge>(
    n: usize,
    workers: Workers,
    init: Init,
    step: Step,
    merge: Merge,
) -> A
where
    A: Send,
    Init: Fn() -> A + Sync + Send,
    Step: Fn(&mut A, usize) + Sync + Send,
    Merge: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, workers, |c| {
        let mut acc = init();
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            step(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, Workers(4), |i| i * 2);
        assert_eq!(v, (0..1000).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn fold_is_independent_of_workers() {
        let run = |w| {
            chunked_fold(
                10_000,
                Workers(w),
                || 0.0f64,
                |acc, i| *acc += (i as f64).sqrt().sin(),
                |a, b| *a += b,
            )
        };
        let seq = run(1);
        assert_eq!(seq.to_bits(), run(3).to_bits());
        assert_eq!(seq.to_bits(), run(0).to_bits());
    }
}
