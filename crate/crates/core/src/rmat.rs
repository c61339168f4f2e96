//! Recursive-matrix (RMAT) generator for skewed synthetic sparse matrices.
//!
//! Quadrant probabilities (a, b, c, d) = (0.57, 0.19, 0.19, 0.05) give the
//! scale-free degree skew typical of web and social graphs. Sampling is
//! counter-based: sample k at recursion level l draws from
//! `mix3(seed, k, l)`, so the generated matrix is a pure function of
//! (scale, nnz_target, seed).

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::rng::{mix3, unit_f64};
use crate::sparse::{Entry, SparseMatrix};

const A: f64 = 0.57;
const B: f64 = 0.19;
const C: f64 = 0.19;

/// Generates a 2^scale x 2^scale matrix with at most `nnz_target` nonzeros.
/// Duplicate positions are dropped, so the final count may be lower.
pub fn gen_rmat(scale: u32, nnz_target: usize, seed: u64) -> Result<SparseMatrix> {
    if scale < 2 {
        return Err(Error::InvalidConfig(format!(
            "rmat scale must be >= 2, got {scale}"
        )));
    }
    if scale > 28 {
        return Err(Error::InvalidConfig(format!(
            "rmat scale {scale} exceeds supported maximum 28"
        )));
    }
    let n = 1usize << scale;
    if (nnz_target as u128) > (n as u128) * (n as u128) {
        return Err(Error::InvalidConfig(format!(
            "nnz_target {nnz_target} exceeds capacity {n}x{n}"
        )));
    }

    let mut seen = HashSet::with_capacity(nnz_target);
    let mut entries = Vec::with_capacity(nnz_target);
    for k in 0..nnz_target {
        let (mut row, mut col) = (0usize, 0usize);
        for level in 0..scale {
            let u = unit_f64(mix3(seed, k as u64, level as u64));
            let (dr, dc) = if u < A {
                (0, 0)
            } else if u < A + B {
                (0, 1)
            } else if u < A + B + C {
                (1, 0)
            } else {
                (1, 1)
            };
            row = (row << 1) | dr;
            col = (col << 1) | dc;
        }
        if seen.insert((row, col)) {
            let val = 0.5 + unit_f64(mix3(seed ^ 0x5eed_u64, row as u64, col as u64));
            entries.push(Entry::new(row, col, val));
        }
    }
    SparseMatrix::from_entries(n, n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = gen_rmat(2, 4, 7).unwrap();
        let b = gen_rmat(2, 4, 7).unwrap();
        assert_eq!(a.entries(), b.entries());
    }

    #[test]
    fn skewed_degree_distribution() {
        let m = gen_rmat(10, 8192, 1).unwrap();
        assert!(m.nnz() <= 8192);
        let mut degree = vec![0usize; m.nrows()];
        for e in m.entries() {
            degree[e.row] += 1;
        }
        let max = *degree.iter().max().unwrap();
        let mean = m.nnz() as f64 / m.nrows() as f64;
        assert!(
            max as f64 > mean * 4.0,
            "max degree {max} not > 4x mean {mean}"
        );
    }

    #[test]
    fn capacity_bound() {
        assert!(gen_rmat(2, 100, 0).is_err());
    }

    #[test]
    fn scale_bounds() {
        assert!(gen_rmat(1, 2, 0).is_err());
        assert!(gen_rmat(40, 2, 0).is_err());
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_rmat(6, 200, 1).unwrap();
        let b = gen_rmat(6, 200, 2).unwrap();
        assert!(!a.same_entries(&b));
    }
}
