//! Data-parallel helpers. With the `parallel` feature disabled every call
//! runs sequentially regardless of the requested [`Execution`].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually fan out on this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `f` with at most `limit` worker threads. A limit of 0 means the
/// global pool's default.
pub fn with_limit<R: Send>(exec: Execution, limit: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && limit > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("falling back to global pool: {e}"),
        }
    }
    let _ = (exec, limit);
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_preserve_order() {
        let xs: Vec<u32> = (0..1000).collect();
        let seq = map(Execution::Sequential, &xs, |x| x * 3);
        let par = map(Execution::Parallel, &xs, |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(
            map_range(Execution::Parallel, 50, |i| i * i),
            map_range(Execution::Sequential, 50, |i| i * i)
        );
        assert_eq!(with_limit(Execution::Parallel, 2, || map_range(Execution::Parallel, 4, |i| i)), vec![0, 1, 2, 3]);
    }
}
