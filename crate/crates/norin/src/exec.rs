//! Execution helpers for data-parallel inner loops.
//!
//! Every parallel site in the crate is an order-preserving map over an index
//! range; results are collected positionally and any floating-point reduction
//! happens afterwards in index order. Parallel and sequential builds therefore
//! produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
///
/// Runs on the rayon pool when the `parallel` feature is enabled, otherwise
/// sequentially.
#[cfg(feature = "parallel")]
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Sequential counterpart of [`map_indices`], always available.
#[allow(dead_code)]
pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    (0..n).map(f).collect()
}
