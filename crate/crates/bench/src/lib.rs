//! Shared fixtures for the benchmark targets.

use sparse3d::sparse::{DenseMatrix, SparseMatrix};

pub fn fixture_matrix() -> SparseMatrix {
    sparse3d::gen_rmat(12, 60_000, 7).expect("fixture rmat")
}

pub fn fixture_dense(rows: usize, k: usize, seed: u64) -> DenseMatrix {
    DenseMatrix::seeded(rows, k, seed)
}
