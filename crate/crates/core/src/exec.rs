//! Pluggable execution of independent jobs.
//!
//! Scans, soup training and client updates are maps over independent jobs
//! whose results are gathered in job order. The core runs them sequentially;
//! `valley-lab` provides a thread-pool executor with the same contract.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluate `f(0..n)` and return the results in index order.
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
