//! Pure single-address-space prediction of everything the engine measures.
//!
//! Uses the same distribution, lambda computation, owner seeds, and formulas
//! as the distributed path, so every predicted count must match the
//! corresponding measurement exactly — this is the cross-module oracle the
//! acceptance suite leans on, and the backbone of the CLI's analysis-only
//! mode.

use serde::Serialize;

use crate::analysis::{compute_lambda, total_sparse_volume, SliceAnalysis, VolumeBreakdown};
use crate::error::Result;
use crate::grid::{dist2d, split_z, ProcGrid};
use crate::ownership::{assign_owners_serial, fiber_seed, FiberKind, OwnerMap};
use crate::sparse::SparseMatrix;

/// Predicted exact counts for one rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankPrediction {
    pub rank: usize,
    pub coords: (usize, usize, usize),
    pub local_nnz: usize,
    pub gathered_nnz: usize,
    pub setup_recv_entries: usize,
    pub owned_rows: usize,
    pub owned_cols: usize,
    pub need_rows: usize,
    pub need_cols: usize,
    /// PreComm received words: rows + cols for SDDMM, cols only for SpMM.
    pub precomm_words_sddmm: usize,
    pub precomm_words_spmm: usize,
    /// PreComm sent words under the point-to-point plans.
    pub send_words_rows: usize,
    pub send_words_cols: usize,
    pub postcomm_words_sddmm: usize,
    pub postcomm_words_spmm: usize,
    pub store_words: usize,
    pub baseline_precomm_words_sddmm: usize,
    pub baseline_precomm_words_spmm: usize,
    pub baseline_store_words: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPrediction {
    pub grid: (usize, usize, usize),
    pub k: usize,
    pub seed: u64,
    pub per_rank: Vec<RankPrediction>,
    /// Histogram over lambda values of row ids (index = lambda).
    pub row_lambda_hist: Vec<usize>,
    pub col_lambda_hist: Vec<usize>,
    /// One slice's sparsity-aware volume (identical across slices).
    pub slice_volume_words: VolumeWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VolumeWords {
    pub rows: usize,
    pub cols: usize,
    pub total: usize,
}

impl From<VolumeBreakdown> for VolumeWords {
    fn from(v: VolumeBreakdown) -> Self {
        VolumeWords {
            rows: v.row_words,
            cols: v.col_words,
            total: v.total(),
        }
    }
}

impl GridPrediction {
    pub fn rank(&self, rank: usize) -> &RankPrediction {
        &self.per_rank[rank]
    }
}

/// Predicts per-rank volumes, footprints, and lambda structure for running
/// `s` on `grid` with the given K and seed.
pub fn predict(s: &SparseMatrix, grid: &ProcGrid, k: usize, seed: u64) -> Result<GridPrediction> {
    let crate::grid::ProcGrid {
        x: gx,
        y: gy,
        z: gz,
    } = *grid;
    if k == 0 || !k.is_multiple_of(gz) {
        return Err(crate::error::Error::InvalidConfig(format!(
            "Z={gz} must divide K={k}"
        )));
    }
    let du = k / gz;
    let blocks = dist2d(s, grid);
    let lambda = compute_lambda(&blocks, grid);

    // Used-id lists per fiber, in fiber-rank order.
    let block_rows: Vec<Vec<Vec<usize>>> = (0..gx)
        .map(|x| {
            (0..gy)
                .map(|y| distinct(blocks[x][y].entries().iter().map(|e| e.row)))
                .collect()
        })
        .collect();
    let block_cols: Vec<Vec<Vec<usize>>> = (0..gx)
        .map(|x| {
            (0..gy)
                .map(|y| distinct(blocks[x][y].entries().iter().map(|e| e.col)))
                .collect()
        })
        .collect();
    let part_sizes: Vec<Vec<Vec<usize>>> = (0..gx)
        .map(|x| {
            (0..gy)
                .map(|y| split_z(&blocks[x][y], gz).iter().map(|p| p.nnz()).collect())
                .collect()
        })
        .collect();

    // Owner maps per (fiber, z): seeds differ per slice, so owners do too.
    let row_owners: Vec<Vec<OwnerMap>> = (0..gx)
        .map(|x| {
            (0..gz)
                .map(|z| {
                    assign_owners_serial(
                        &block_rows[x],
                        grid.row_range(s.nrows(), x),
                        fiber_seed(seed, FiberKind::Row, x, z),
                    )
                })
                .collect()
        })
        .collect();
    let col_owners: Vec<Vec<OwnerMap>> = (0..gy)
        .map(|y| {
            let used: Vec<Vec<usize>> = (0..gx).map(|x| block_cols[x][y].clone()).collect();
            (0..gz)
                .map(|z| {
                    assign_owners_serial(
                        &used,
                        grid.col_range(s.ncols(), y),
                        fiber_seed(seed, FiberKind::Col, y, z),
                    )
                })
                .collect()
        })
        .collect();

    let mut per_rank = Vec::with_capacity(grid.size());
    for rank in 0..grid.size() {
        let (x, y, z) = grid.coords_of(rank);
        let row_owner = &row_owners[x][z];
        let col_owner = &col_owners[y][z];
        let used_rows = &block_rows[x][y];
        let used_cols = &block_cols[x][y];
        let owned_rows = row_owner.owned_by(y).len();
        let owned_cols = col_owner.owned_by(x).len();
        let need_rows = used_rows
            .iter()
            .filter(|&&id| row_owner.owner(id) != Some(y))
            .count();
        let need_cols = used_cols
            .iter()
            .filter(|&&id| col_owner.owner(id) != Some(x))
            .count();

        // Words I send under the broadcast graphs: one copy per other
        // user of each id I own.
        let send_rows: usize = lambda.row_fibers[x]
            .iter()
            .filter(|(&id, _)| row_owner.owner(id) == Some(y))
            .map(|(_, users)| users.len() - 1)
            .sum();
        let send_cols: usize = lambda.col_fibers[y]
            .iter()
            .filter(|(&id, _)| col_owner.owner(id) == Some(x))
            .map(|(_, users)| users.len() - 1)
            .sum();

        let gathered_nnz = blocks[x][y].nnz();
        let local_nnz = part_sizes[x][y][z];
        let row_range_len = grid.row_range(s.nrows(), x).len();
        let col_range_len = grid.col_range(s.ncols(), y).len();

        per_rank.push(RankPrediction {
            rank,
            coords: (x, y, z),
            local_nnz,
            gathered_nnz,
            setup_recv_entries: gathered_nnz - local_nnz,
            owned_rows,
            owned_cols,
            need_rows,
            need_cols,
            precomm_words_sddmm: du * (need_rows + need_cols),
            precomm_words_spmm: du * need_cols,
            send_words_rows: du * send_rows,
            send_words_cols: du * send_cols,
            postcomm_words_sddmm: (gz - 1) * local_nnz,
            postcomm_words_spmm: du * send_rows,
            store_words: du * (need_rows + need_cols + owned_rows + owned_cols),
            baseline_precomm_words_sddmm: du
                * ((row_range_len - owned_rows) + (col_range_len - owned_cols)),
            baseline_precomm_words_spmm: du * (col_range_len - owned_cols),
            baseline_store_words: du * (row_range_len + col_range_len),
        });
    }

    let row_lambda_hist = SliceAnalysis::lambda_histogram(&lambda.row_fibers, gy);
    let col_lambda_hist = SliceAnalysis::lambda_histogram(&lambda.col_fibers, gx);
    let slice_volume_words = total_sparse_volume(&lambda, k, gz).into();
    Ok(GridPrediction {
        grid: (gx, gy, gz),
        k,
        seed,
        per_rank,
        row_lambda_hist,
        col_lambda_hist,
        slice_volume_words,
    })
}

fn distinct(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}
