//! Deterministic data-parallel accumulation.
//!
//! Data are cut into fixed-size blocks regardless of the thread count; blocks are
//! reduced with a fixed pairwise tree, so floating-point results do not depend on
//! scheduling.

use std::ops::Range;

use rayon::prelude::*;

pub const BLOCK: usize = 16;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SSPN_THREADS";

/// Maps `f` over blocks of `0..n` in parallel and folds the block results pairwise.
/// Returns `None` for `n == 0`.
pub fn map_reduce<A, E, M, R>(n: usize, map: M, reduce: R) -> Result<Option<A>, E>
where
    A: Send,
    E: Send,
    M: Fn(Range<usize>) -> Result<A, E> + Sync,
    R: Fn(A, A) -> A,
{
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| map(b * BLOCK..((b + 1) * BLOCK).min(n)))
        .collect::<Result<_, E>>()?;
    Ok(tree_reduce(parts, reduce))
}

/// Pairwise reduction `((a0+a1)+(a2+a3))+...` with a fixed shape for a given length.
pub fn tree_reduce<A>(mut parts: Vec<A>, reduce: impl Fn(A, A) -> A) -> Option<A> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(reduce(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Sizes the global pool from `SSPN_THREADS` when set. Safe to call more than once.
pub fn init_thread_pool() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
