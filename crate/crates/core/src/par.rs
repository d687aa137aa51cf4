//! Order-preserving map over independent work items.
//!
//! Results always come back in input order, so any reduction the caller
//! performs afterwards is sequential and bit-identical regardless of how many
//! threads produced the items. Without the `parallel` feature every executor
//! runs sequentially.

use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Default)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
    #[cfg(not(feature = "parallel"))]
    _seq: Option<Arc<()>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads()).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self::default()
    }

    /// `jobs <= 1` gives a sequential executor; `jobs > 1` a dedicated pool
    /// with that many threads (when built with `parallel`).
    pub fn new(jobs: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if jobs > 1 {
                match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                    Ok(pool) => {
                        return Self {
                            pool: Some(Arc::new(pool)),
                        }
                    }
                    Err(e) => log::warn!("falling back to sequential execution: {e}"),
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        if jobs > 1 {
            log::debug!("built without `parallel`; ignoring jobs={jobs}");
        }
        Self::default()
    }

    pub fn threads(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Executor::sequential().map(&items, |x| x * x);
        let par = Executor::new(4).map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 100);
    }
}
