//! Global sparse/dense matrix types and the serial reference kernels.
//!
//! `SparseMatrix` is a coordinate-form matrix sorted row-major; `DenseMatrix`
//! is a row-major tall-and-skinny matrix. The reference kernels here are the
//! oracles every distributed execution is checked against, so they stay as
//! plain as possible: fixed ascending accumulation order, no blocking, no
//! compressed storage.

use crate::error::{Error, Result};
use crate::rng::{mix3, unit_f64};

/// One nonzero of a sparse matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub val: f64,
}

impl Entry {
    pub fn new(row: usize, col: usize, val: f64) -> Self {
        Entry { row, col, val }
    }

    fn key(&self) -> (usize, usize) {
        (self.row, self.col)
    }
}

/// Coordinate-form sparse matrix with unique, row-major sorted entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<Entry>,
    sorted: bool,
}

impl SparseMatrix {
    /// Builds a matrix from entries, sorting them row-major.
    /// Duplicate (row, col) pairs are an error.
    pub fn from_entries(nrows: usize, ncols: usize, mut entries: Vec<Entry>) -> Result<Self> {
        check_bounds(nrows, ncols, &entries)?;
        entries.sort_by_key(Entry::key);
        for w in entries.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate entry at ({}, {})",
                    w[0].row, w[0].col
                )));
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            entries,
            sorted: true,
        })
    }

    /// Builds a matrix from entries, summing duplicates (sparse-assembly convention).
    pub fn from_entries_summed(
        nrows: usize,
        ncols: usize,
        mut entries: Vec<Entry>,
    ) -> Result<Self> {
        check_bounds(nrows, ncols, &entries)?;
        entries.sort_by_key(Entry::key);
        let mut out: Vec<Entry> = Vec::with_capacity(entries.len());
        for e in entries {
            match out.last_mut() {
                Some(last) if last.key() == e.key() => last.val += e.val,
                _ => out.push(e),
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            entries: out,
            sorted: true,
        })
    }

    /// Entries already sorted row-major and unique; validated in debug builds.
    pub(crate) fn from_sorted_unchecked(nrows: usize, ncols: usize, entries: Vec<Entry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].key() < w[1].key()));
        debug_assert!(entries.iter().all(|e| e.row < nrows && e.col < ncols));
        SparseMatrix {
            nrows,
            ncols,
            entries,
            sorted: true,
        }
    }

    /// Empty matrix of the given shape.
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            entries: Vec::new(),
            sorted: true,
        }
    }

    /// Identity pattern with the given values on the diagonal set to 1.
    pub fn identity(n: usize) -> Self {
        let entries = (0..n).map(|i| Entry::new(i, i, 1.0)).collect();
        SparseMatrix {
            nrows: n,
            ncols: n,
            entries,
            sorted: true,
        }
    }

    /// Fully dense pattern with a deterministic value per position.
    pub fn dense_pattern(nrows: usize, ncols: usize, seed: u64) -> Self {
        let mut entries = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                let v = 0.5 + unit_f64(mix3(seed, i as u64, j as u64));
                entries.push(Entry::new(i, j, v));
            }
        }
        SparseMatrix {
            nrows,
            ncols,
            entries,
            sorted: true,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    /// Multiset equality irrespective of entry order.
    pub fn same_entries(&self, other: &SparseMatrix) -> bool {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return false;
        }
        let mut a: Vec<_> = self.entries.clone();
        let mut b: Vec<_> = other.entries.clone();
        a.sort_by_key(Entry::key);
        b.sort_by_key(Entry::key);
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.key() == y.key() && x.val == y.val)
    }
}

fn check_bounds(nrows: usize, ncols: usize, entries: &[Entry]) -> Result<()> {
    for e in entries {
        if e.row >= nrows || e.col >= ncols {
            return Err(Error::InvalidConfig(format!(
                "entry ({}, {}) outside {}x{} matrix",
                e.row, e.col, nrows, ncols
            )));
        }
    }
    Ok(())
}

/// Row-major dense matrix; `ncols` is K (or K/Z for a column slice).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            values: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_values(nrows: usize, ncols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "dense values length {} != {}x{}",
                values.len(),
                nrows,
                ncols
            )));
        }
        Ok(DenseMatrix {
            nrows,
            ncols,
            values,
        })
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for k in 0..ncols {
                values.push(f(i, k));
            }
        }
        DenseMatrix {
            nrows,
            ncols,
            values,
        }
    }

    /// Deterministic pseudo-random values in [0, 1).
    pub fn seeded(nrows: usize, ncols: usize, seed: u64) -> Self {
        Self::from_fn(nrows, ncols, |i, k| {
            unit_f64(mix3(seed, i as u64, k as u64))
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.ncols..(i + 1) * self.ncols]
    }
}

/// Serial SDDMM: c_ij = s_ij * <a_i, b_j> at every nonzero of `s`.
///
/// Output has exactly the sparsity pattern (and entry order) of `s`; the
/// K-loop accumulates in ascending index order.
pub fn sddmm_ref(s: &SparseMatrix, a: &DenseMatrix, b: &DenseMatrix) -> Result<SparseMatrix> {
    if a.nrows() != s.nrows() || b.nrows() != s.ncols() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sddmm: S {}x{}, A {}x{}, B {}x{}",
            s.nrows(),
            s.ncols(),
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let entries = s
        .entries()
        .iter()
        .map(|e| {
            let ai = a.row(e.row);
            let bj = b.row(e.col);
            let mut dot = 0.0;
            for k in 0..a.ncols() {
                dot += ai[k] * bj[k];
            }
            Entry::new(e.row, e.col, e.val * dot)
        })
        .collect();
    Ok(SparseMatrix {
        nrows: s.nrows(),
        ncols: s.ncols(),
        entries,
        sorted: s.sorted,
    })
}

/// Serial SpMM: a_i = sum_j s_ij * b_j, columns ascending within each row.
pub fn spmm_ref(s: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "spmm: S {}x{}, B {}x{}",
            s.nrows(),
            s.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let k = b.ncols();
    let mut out = DenseMatrix::zeros(s.nrows(), k);
    let sorted;
    let entries: &[Entry] = if s.is_sorted() {
        s.entries()
    } else {
        sorted = {
            let mut v = s.entries().to_vec();
            v.sort_by_key(Entry::key);
            v
        };
        &sorted
    };
    for e in entries {
        let bj = b.row(e.col);
        let ai = out.row_mut(e.row);
        for x in 0..k {
            ai[x] += e.val * bj[x];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_s() -> SparseMatrix {
        SparseMatrix::from_entries(2, 2, vec![Entry::new(0, 0, 2.0), Entry::new(1, 1, 3.0)])
            .unwrap()
    }

    #[test]
    fn sddmm_hand_values() {
        // c_00 = 2*(1*5+2*6) = 34, c_11 = 3*(3*7+4*8) = 159
        let s = sample_s();
        let a = DenseMatrix::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseMatrix::from_values(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = sddmm_ref(&s, &a, &b).unwrap();
        assert_eq!(c.entries()[0], Entry::new(0, 0, 34.0));
        assert_eq!(c.entries()[1], Entry::new(1, 1, 159.0));
    }

    #[test]
    fn sddmm_all_ones_k1() {
        let mut entries = Vec::new();
        for i in 0..3 {
            for j in 0..4 {
                if (i + j) % 2 == 0 {
                    entries.push(Entry::new(i, j, 1.0));
                }
            }
        }
        let s = SparseMatrix::from_entries(3, 4, entries).unwrap();
        let a = DenseMatrix::from_fn(3, 1, |_, _| 1.0);
        let b = DenseMatrix::from_fn(4, 1, |_, _| 1.0);
        let c = sddmm_ref(&s, &a, &b).unwrap();
        assert!(c.entries().iter().all(|e| e.val == 1.0));
    }

    #[test]
    fn sddmm_empty() {
        let s = SparseMatrix::empty(5, 7);
        let a = DenseMatrix::zeros(5, 3);
        let b = DenseMatrix::zeros(7, 3);
        let c = sddmm_ref(&s, &a, &b).unwrap();
        assert_eq!(c.nnz(), 0);
        assert_eq!(c.nrows(), 5);
    }

    #[test]
    fn sddmm_pattern_preserved() {
        let s = SparseMatrix::dense_pattern(6, 5, 3);
        let a = DenseMatrix::seeded(6, 4, 1);
        let b = DenseMatrix::seeded(5, 4, 2);
        let c = sddmm_ref(&s, &a, &b).unwrap();
        assert_eq!(c.nnz(), s.nnz());
        for (x, y) in s.entries().iter().zip(c.entries()) {
            assert_eq!((x.row, x.col), (y.row, y.col));
        }
    }

    #[test]
    fn sddmm_dimension_mismatch() {
        let s = sample_s();
        let a = DenseMatrix::zeros(3, 2);
        let b = DenseMatrix::zeros(2, 2);
        assert!(sddmm_ref(&s, &a, &b).is_err());
    }

    #[test]
    fn spmm_hand_values() {
        // a_0 = 2*b_0 = (10,12), a_1 = 3*b_1 = (21,24)
        let s = sample_s();
        let b = DenseMatrix::from_values(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let a = spmm_ref(&s, &b).unwrap();
        assert_eq!(a.row(0), &[10.0, 12.0]);
        assert_eq!(a.row(1), &[21.0, 24.0]);
    }

    #[test]
    fn spmm_identity_is_bitwise() {
        let s = SparseMatrix::identity(9);
        let b = DenseMatrix::seeded(9, 5, 11);
        let a = spmm_ref(&s, &b).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn spmm_empty_row_is_zero() {
        let s = SparseMatrix::from_entries(3, 2, vec![Entry::new(0, 1, 2.0)]).unwrap();
        let b = DenseMatrix::seeded(2, 4, 5);
        let a = spmm_ref(&s, &b).unwrap();
        assert!(a.row(1).iter().all(|&v| v == 0.0));
        assert!(a.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let s = sample_s();
        let b = DenseMatrix::zeros(3, 2);
        assert!(spmm_ref(&s, &b).is_err());
    }

    #[test]
    fn diagonal_sddmm_matches_direct_product() {
        let n = 8;
        let k = 6;
        let entries = (0..n).map(|i| Entry::new(i, i, 1.5 + i as f64)).collect();
        let s = SparseMatrix::from_entries(n, n, entries).unwrap();
        let a = DenseMatrix::seeded(n, k, 21);
        let b = DenseMatrix::seeded(n, k, 22);
        let c = sddmm_ref(&s, &a, &b).unwrap();
        for (i, e) in c.entries().iter().enumerate() {
            let mut dot = 0.0;
            for x in 0..k {
                dot += a.row(i)[x] * b.row(i)[x];
            }
            let want = (1.5 + i as f64) * dot;
            assert!((e.val - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn duplicates_rejected_or_summed() {
        let dup = vec![Entry::new(1, 1, 1.0), Entry::new(1, 1, 2.0)];
        assert!(SparseMatrix::from_entries(2, 2, dup.clone()).is_err());
        let s = SparseMatrix::from_entries_summed(2, 2, dup).unwrap();
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.entries()[0].val, 3.0);
    }
}
