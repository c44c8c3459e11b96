//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the map runs on the rayon pool unless the
//! caller asks for deterministic single-threaded execution. Results are
//! always returned in input order, so any reduction done by the caller over
//! the returned vector is independent of scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the data-parallel inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    pub fn from_deterministic(deterministic: bool) -> Self {
        if deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

pub fn map_indexed<T, R, F>(items: &[T], exec: Exec, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect(),
        _ => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

pub fn map_range<R, F>(n: usize, exec: Exec, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}
