//! Execution strategy: data-parallel by default, sequential on request.
//!
//! Blocks are independent units for analysis, transformation, capture, and
//! simulation, and corpus sweeps are independent per workload, so both map
//! cleanly onto worker threads. Every helper preserves input order, which
//! keeps output byte-identical across modes; the bench suite compares the
//! two modes on the same corpus.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Order-preserving map. `Parallel` degrades to sequential when the crate
/// is built without the `parallel` feature.
pub fn map_collect<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}
