//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the helpers fan work out over
//! the rayon global pool; without it they run sequentially. Results are always
//! collected in index order, so any reduction done by the caller over the
//! returned vector is bit-identical between the two modes.

/// How an index-parallel map should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Use the thread pool when the `parallel` feature is enabled.
    #[default]
    Auto,
    /// Force a single-threaded loop.
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Auto
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Applies `f` to every `chunk`-sized mutable slice of `out`, passing the chunk index.
pub fn for_each_chunk_mut<F>(out: &mut [f64], chunk: usize, exec: Execution, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        // small outputs are not worth the fork/join overhead
        if exec.is_parallel() && out.len() >= 4096 {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = exec;
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let a = map_range(1000, Execution::Auto, |i| i * 3);
        let b = map_range(1000, Execution::Sequential, |i| i * 3);
        assert_eq!(a, b);
        assert_eq!(a[999], 2997);
    }

    #[test]
    fn chunked_fill_matches_sequential() {
        let mut a = vec![0.0; 8192];
        let mut b = vec![0.0; 8192];
        let fill = |i: usize, c: &mut [f64]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 16 + j) as f64;
            }
        };
        for_each_chunk_mut(&mut a, 16, Execution::Auto, fill);
        for_each_chunk_mut(&mut b, 16, Execution::Sequential, fill);
        assert_eq!(a, b);
    }
}
