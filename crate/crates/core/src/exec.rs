//! Task execution: a rayon pool when the `parallel` feature is on and more
//! than one thread is requested, a plain loop otherwise.
//!
//! The thread count never changes results. Callers hand in independent
//! indexed tasks and always get results back in index order.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[derive(Clone)]
pub struct ExecPolicy {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for ExecPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecPolicy")
            .field("threads", &self.threads)
            .finish()
    }
}

impl Default for ExecPolicy {
    /// All available cores (or sequential without the `parallel` feature).
    fn default() -> Self {
        Self::with_threads(0)
    }
}

impl ExecPolicy {
    pub fn sequential() -> Self {
        Self::with_threads(1)
    }

    /// `0` picks the available parallelism.
    pub fn with_threads(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            threads
        };
        #[cfg(feature = "parallel")]
        {
            let pool = (threads > 1).then(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(|i| format!("ldpbench-{i}"))
                        .build()
                        .expect("failed to build thread pool"),
                )
            });
            Self { threads, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self { threads: 1 }
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        false
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}
