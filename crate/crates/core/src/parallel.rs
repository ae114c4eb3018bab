//! Order-preserving data-parallel map. With the `parallel` feature the work
//! runs on a rayon pool; without it (or with one thread) it runs inline.
//! Either way results come back in input order, so reductions over them are
//! bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `threads == 0` means one worker per available core.
    pub fn with_threads(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if threads == 1 {
                return Self::sequential();
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok();
            Executor { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self::sequential()
        }
    }

    pub fn threads(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(p) = &self.pool {
            return p.current_num_threads();
        }
        1
    }

    pub fn is_parallel(&self) -> bool {
        self.threads() > 1
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

    /// Maps fixed-size chunks; the chunking never depends on the thread count.
    pub fn map_chunks<T, R, F>(&self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_chunks(chunk).map(&f).collect());
        }
        items.chunks(chunk).map(f).collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::with_threads(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        for exec in [Executor::sequential(), Executor::with_threads(4)] {
            let ys = exec.map(&xs, |x| x * 2);
            assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
            let sums = exec.map_chunks(&xs, 7, |c| c.iter().sum::<u64>());
            assert_eq!(sums.len(), 143);
            assert_eq!(sums.iter().sum::<u64>(), xs.iter().sum::<u64>());
        }
    }
}
