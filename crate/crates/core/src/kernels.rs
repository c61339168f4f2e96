//! Per-rank local compute for SDDMM and SpMM.
//!
//! Compute is communication-agnostic: it sees a localized block and dense
//! row chunks resolved out of the rank's store, nothing else. Resolution
//! happens once after setup (the store layout is frozen by then); an id that
//! fails to resolve indicates a plan bug and is an error, never a fallback.
//! Accumulation orders are fixed (k ascending within a chunk, columns
//! ascending within a row) so results are bit-reproducible per configuration.

use crate::error::{Error, Result};
use crate::grid::LocalBlock;
use crate::plan::DenseRowStore;

/// Word offsets into a store, one per local index of a block.
#[derive(Debug, Clone)]
pub struct LocalDense {
    offsets: Vec<usize>,
    du_len: usize,
}

impl LocalDense {
    /// Resolves every local row index of the block in the store.
    pub fn resolve_rows(block: &LocalBlock, store: &DenseRowStore) -> Result<LocalDense> {
        Self::resolve(&block.row_global, store)
    }

    /// Resolves every local col index of the block in the store.
    pub fn resolve_cols(block: &LocalBlock, store: &DenseRowStore) -> Result<LocalDense> {
        Self::resolve(&block.col_global, store)
    }

    fn resolve(globals: &[usize], store: &DenseRowStore) -> Result<LocalDense> {
        let offsets = globals
            .iter()
            .map(|&id| store.offset_of(id).ok_or(Error::UnresolvedIndex { id }))
            .collect::<Result<Vec<_>>>()?;
        Ok(LocalDense {
            offsets,
            du_len: store.du_len(),
        })
    }

    #[inline]
    pub fn chunk<'a>(&self, local: usize, data: &'a [f64]) -> &'a [f64] {
        let o = self.offsets[local];
        &data[o..o + self.du_len]
    }

    pub fn offset(&self, local: usize) -> usize {
        self.offsets[local]
    }
}

/// Partial SDDMM over this slice's coordinate chunk: for each block nonzero,
/// `s * <a-chunk, b-chunk>`, output aligned to block entry order.
pub fn local_sddmm(
    block: &LocalBlock,
    a_rows: &LocalDense,
    a_data: &[f64],
    b_cols: &LocalDense,
    b_data: &[f64],
) -> Vec<f64> {
    let du = a_rows.du_len;
    block
        .entries
        .iter()
        .map(|e| {
            let a = a_rows.chunk(e.row, a_data);
            let b = b_cols.chunk(e.col, b_data);
            let mut dot = 0.0;
            for k in 0..du {
                dot += a[k] * b[k];
            }
            e.val * dot
        })
        .collect()
}

/// Partial SpMM: folds `s * b_j-chunk` into the output store row of every
/// block row, columns ascending. The output store must be zeroed by the
/// caller at the start of the iteration.
pub fn local_spmm(
    block: &LocalBlock,
    b_cols: &LocalDense,
    b_data: &[f64],
    a_rows: &LocalDense,
    a_store: &mut DenseRowStore,
) {
    let du = b_cols.du_len;
    for e in &block.entries {
        let bo = b_cols.offset(e.col);
        let ao = a_rows.offset(e.row);
        let data = a_store.data_mut();
        for k in 0..du {
            data[ao + k] += e.val * b_data[bo + k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::localize;
    use crate::sparse::{sddmm_ref, spmm_ref, DenseMatrix, Entry, SparseMatrix};

    fn store_from(dense: &DenseMatrix, ids: Vec<usize>) -> DenseRowStore {
        let mut store = DenseRowStore::new(dense.ncols(), ids);
        for &id in store.ids().to_vec().iter() {
            store.row_mut(id).unwrap().copy_from_slice(dense.row(id));
        }
        store
    }

    #[test]
    fn single_rank_sddmm_is_bitwise_reference() {
        let s = SparseMatrix::dense_pattern(5, 4, 2);
        let a = DenseMatrix::seeded(5, 3, 7);
        let b = DenseMatrix::seeded(4, 3, 8);
        let block = localize(&s);
        let a_store = store_from(&a, (0..5).collect());
        let b_store = store_from(&b, (0..4).collect());
        let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
        let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
        let got = local_sddmm(&block, &ar, a_store.data(), &bc, b_store.data());
        let want = sddmm_ref(&s, &a, &b).unwrap();
        for (g, w) in got.iter().zip(want.entries()) {
            assert_eq!(*g, w.val);
        }
    }

    #[test]
    fn chunked_partials_sum_to_full_dot() {
        // a_0 = (1,2), b_0 = (5,6) zero-padded to K=4 and split into two
        // K/Z=2 slices; the slice partials for c_00 sum to 2*(1*5+2*6) = 34.
        let s = SparseMatrix::from_entries(2, 2, vec![Entry::new(0, 0, 2.0)]).unwrap();
        let a =
            DenseMatrix::from_values(2, 4, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b =
            DenseMatrix::from_values(2, 4, vec![5.0, 6.0, 3.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let block = localize(&s);
        let mut total = 0.0;
        for z in 0..2 {
            let a_slice = DenseMatrix::from_fn(2, 2, |i, k| a.row(i)[z * 2 + k]);
            let b_slice = DenseMatrix::from_fn(2, 2, |j, k| b.row(j)[z * 2 + k]);
            let a_store = store_from(&a_slice, vec![0]);
            let b_store = store_from(&b_slice, vec![0]);
            let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
            let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
            total += local_sddmm(&block, &ar, a_store.data(), &bc, b_store.data())[0];
        }
        assert_eq!(total, 34.0);
        let full = sddmm_ref(&s, &a, &b).unwrap();
        assert_eq!(full.entries()[0].val, total);
    }

    #[test]
    fn empty_block_empty_output() {
        let s = SparseMatrix::empty(3, 3);
        let block = localize(&s);
        let a_store = DenseRowStore::new(2, vec![]);
        let b_store = DenseRowStore::new(2, vec![]);
        let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
        let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
        assert!(local_sddmm(&block, &ar, a_store.data(), &bc, b_store.data()).is_empty());
    }

    #[test]
    fn single_rank_spmm_is_bitwise_reference() {
        let s = SparseMatrix::dense_pattern(4, 6, 3);
        let b = DenseMatrix::seeded(6, 5, 9);
        let block = localize(&s);
        let b_store = store_from(&b, (0..6).collect());
        let mut a_store = DenseRowStore::new(5, (0..4).collect());
        let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
        let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
        local_spmm(&block, &bc, b_store.data(), &ar, &mut a_store);
        let want = spmm_ref(&s, &b).unwrap();
        for i in 0..4 {
            assert_eq!(a_store.row(i).unwrap(), want.row(i));
        }
    }

    #[test]
    fn split_rows_partials_add_up() {
        // Two ranks split row 0's nonzeros; their partials sum to the
        // reference row.
        let s = SparseMatrix::from_entries(
            1,
            4,
            vec![
                Entry::new(0, 0, 1.0),
                Entry::new(0, 1, 2.0),
                Entry::new(0, 2, 3.0),
                Entry::new(0, 3, 4.0),
            ],
        )
        .unwrap();
        let b = DenseMatrix::seeded(4, 3, 4);
        let halves = [
            SparseMatrix::from_entries(1, 4, s.entries()[..2].to_vec()).unwrap(),
            SparseMatrix::from_entries(1, 4, s.entries()[2..].to_vec()).unwrap(),
        ];
        let mut acc = [0.0; 3];
        for h in &halves {
            let block = localize(h);
            let b_store = store_from(&b, block.col_global.clone());
            let mut a_store = DenseRowStore::new(3, vec![0]);
            let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
            let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
            local_spmm(&block, &bc, b_store.data(), &ar, &mut a_store);
            for (a, v) in acc.iter_mut().zip(a_store.row(0).unwrap()) {
                *a += v;
            }
        }
        let want = spmm_ref(&s, &b).unwrap();
        for (a, w) in acc.iter().zip(want.row(0)) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn single_nonzero_scales_chunk() {
        let s = SparseMatrix::from_entries(2, 2, vec![Entry::new(1, 0, 2.5)]).unwrap();
        let b = DenseMatrix::from_values(2, 2, vec![2.0, 4.0, 0.0, 0.0]).unwrap();
        let block = localize(&s);
        let b_store = store_from(&b, vec![0]);
        let mut a_store = DenseRowStore::new(2, vec![1]);
        let ar = LocalDense::resolve_rows(&block, &a_store).unwrap();
        let bc = LocalDense::resolve_cols(&block, &b_store).unwrap();
        local_spmm(&block, &bc, b_store.data(), &ar, &mut a_store);
        assert_eq!(a_store.row(1).unwrap(), &[5.0, 10.0]);
    }

    #[test]
    fn unresolved_index_is_error() {
        let s = SparseMatrix::from_entries(2, 2, vec![Entry::new(0, 1, 1.0)]).unwrap();
        let block = localize(&s);
        let store = DenseRowStore::new(2, vec![0]);
        let err = LocalDense::resolve_cols(&block, &store).unwrap_err();
        assert!(matches!(err, Error::UnresolvedIndex { id: 1 }));
    }
}
