//! Sequential / data-parallel execution switch.
//!
//! Every parallel path writes each output slot from its own index only, so
//! results are bit-identical whichever variant runs. Without the `parallel`
//! feature, [`Execution::Parallel`] silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    /// `true` when this build can actually run in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Fills `out[i] = f(i)`.
    #[inline]
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => out
                .par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(i, slot)| *slot = f(i)),
            _ => {
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = f(i);
                }
            }
        }
    }

    /// Calls `f(i, &mut out[i])` for every slot.
    #[inline]
    pub fn for_each_mut<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => out
                .par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(i, slot)| f(i, slot)),
            _ => {
                for (i, slot) in out.iter_mut().enumerate() {
                    f(i, slot);
                }
            }
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Runs `job` on a dedicated pool of `workers` threads (or inline when the
/// `parallel` feature is off).
pub fn with_workers<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
        {
            Ok(pool) => pool.install(job),
            Err(e) => {
                log::warn!("could not start {workers} workers ({e}); running inline");
                job()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        job()
    }
}
