//! Fixed-shape summation trees.
//!
//! Every reduction in the crate goes through these helpers so that the
//! result only depends on the input order, never on the thread count.

use ndarray::Array2;
use rayon::prelude::*;

const LEAF: usize = 8;

/// Samples per block when accumulating matrix-valued partial sums.
pub const BLOCK: usize = 64;

/// Recursive pairwise summation with a sequential leaf of 8 terms.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise combination of equally shaped matrices, in place into the
/// first element. The tree shape mirrors [`pairwise_sum`].
pub fn pairwise_sum_matrices(mut parts: Vec<Array2<f64>>) -> Option<Array2<f64>> {
    if parts.is_empty() {
        return None;
    }
    fn go(parts: &mut [Array2<f64>]) {
        if parts.len() <= 1 {
            return;
        }
        let mid = parts.len() / 2;
        let (lo, hi) = parts.split_at_mut(mid);
        go(lo);
        go(hi);
        let rhs = std::mem::take(&mut hi[0]);
        lo[0] += &rhs;
    }
    go(&mut parts);
    Some(parts.swap_remove(0))
}

/// Maps fixed-size blocks of `0..len` to matrices in parallel and combines
/// them with the deterministic pairwise tree.
pub fn block_reduce<F>(len: usize, shape: (usize, usize), f: F) -> Array2<f64>
where
    F: Fn(std::ops::Range<usize>) -> Array2<f64> + Sync,
{
    let blocks: Vec<_> = (0..len.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(len))
        .collect();
    let parts: Vec<Array2<f64>> = blocks.into_par_iter().map(&f).collect();
    pairwise_sum_matrices(parts).unwrap_or_else(|| Array2::zeros(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn pairwise_beats_naive_on_cancellation() {
        let mut xs = vec![0.1; 1 << 20];
        xs[0] = 1e8;
        let naive: f64 = xs.iter().sum();
        let exact = 1e8 + 0.1 * ((1 << 20) - 1) as f64;
        assert!((pairwise_sum(&xs) - exact).abs() <= (naive - exact).abs());
    }

    #[test]
    fn block_reduce_independent_of_pool_size() {
        let f = |r: std::ops::Range<usize>| {
            let mut m = Array2::zeros((2, 2));
            for i in r {
                m[[0, 0]] += (i as f64).sin();
                m[[1, 1]] += (i as f64).cos() * 1e-3;
            }
            m
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| block_reduce(10_007, (2, 2), f));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| block_reduce(10_007, (2, 2), f));
        assert_eq!(one, many);
    }
}
