//! Per-item execution strategy for batch operations.
//!
//! Batch entry points take an [`Execution`]. With the `parallel` feature the
//! `Parallel` variant maps items on the rayon pool; without it both variants
//! run sequentially. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this strategy actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps then folds with an associative `merge`, starting from `identity`.
    pub fn map_reduce<T, A, F, I, M>(self, items: &[T], identity: I, f: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        F: Fn(&T) -> A + Sync + Send,
        I: Fn() -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).reduce(&identity, &merge);
        }
        items.iter().map(f).fold(identity(), merge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Execution::Sequential.map(&items, |x| x * x);
        let par = Execution::Parallel.map(&items, |x| x * x);
        assert_eq!(seq, par);
        let s1 = Execution::Sequential.map_reduce(&items, || 0u64, |x| *x, |a, b| a + b);
        let s2 = Execution::Parallel.map_reduce(&items, || 0u64, |x| *x, |a, b| a + b);
        assert_eq!(s1, 499_500);
        assert_eq!(s1, s2);
    }
}
