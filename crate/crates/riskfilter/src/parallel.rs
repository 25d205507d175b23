use rayon::prelude::*;
use riskfilter_core::exec::Executor;

use crate::Error;

/// Thread-pool executor. Results come back in index order, so output does
/// not depend on the number of workers.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `None` or `Some(0)` uses the available parallelism.
    pub fn new(jobs: Option<usize>) -> Result<Self, Error> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
        Ok(Pool { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map_indices<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..len).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let pool = Pool::new(Some(3)).unwrap();
        assert_eq!(pool.workers(), 3);
        let out = pool.map_indices(1000, |i| i * i);
        assert_eq!(out, (0..1000).map(|i| i * i).collect::<Vec<_>>());
    }
}
