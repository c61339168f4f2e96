//! Exact communication-volume and memory accounting.
//!
//! For each row fiber, `lambda` maps a global row id to the sorted set of
//! fiber ranks whose block has at least one nonzero in that row (and
//! symmetrically per column fiber). From lambda plus an owner assignment the
//! exact per-rank received volume is `(K/Z) * (|needed rows| + |needed
//! cols|)` words and the fiber total is `sum(lambda - 1)` data units.
//!
//! The sparsity-agnostic 1D/2D/3D formulas are kept alongside as the
//! comparison baseline; they are approximations by construction, evaluated
//! in exact rational arithmetic and rounded half-up to whole words at the
//! end.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::ProcGrid;
use crate::ownership::OwnerMap;
use crate::sparse::SparseMatrix;

/// Per-fiber lambda map: global id -> sorted fiber ranks using it.
pub type FiberLambda = BTreeMap<usize, Vec<usize>>;

/// Lambda structure of one 2D slice: `row_fibers[x]` covers row fiber x
/// (ranks indexed by y), `col_fibers[y]` covers column fiber y (ranks
/// indexed by x). Gathered blocks are identical across z slices, so one
/// analysis serves every slice.
#[derive(Debug, Clone)]
pub struct SliceAnalysis {
    pub row_fibers: Vec<FiberLambda>,
    pub col_fibers: Vec<FiberLambda>,
}

/// Exact lambda sets for the X x Y gathered blocks of a slice.
pub fn compute_lambda(blocks: &[Vec<SparseMatrix>], grid: &ProcGrid) -> SliceAnalysis {
    let mut row_fibers = vec![FiberLambda::new(); grid.x];
    let mut col_fibers = vec![FiberLambda::new(); grid.y];
    for (x, row) in blocks.iter().enumerate() {
        for (y, block) in row.iter().enumerate() {
            let mut rows: Vec<usize> = block.entries().iter().map(|e| e.row).collect();
            rows.sort_unstable();
            rows.dedup();
            for i in rows {
                row_fibers[x].entry(i).or_default().push(y);
            }
            let mut cols: Vec<usize> = block.entries().iter().map(|e| e.col).collect();
            cols.sort_unstable();
            cols.dedup();
            for j in cols {
                col_fibers[y].entry(j).or_default().push(x);
            }
        }
    }
    // Rank lists come out sorted because blocks are visited in rank order.
    SliceAnalysis {
        row_fibers,
        col_fibers,
    }
}

impl SliceAnalysis {
    /// Histogram over lambda values (index = lambda); index 0 unused.
    pub fn lambda_histogram(fibers: &[FiberLambda], max: usize) -> Vec<usize> {
        let mut hist = vec![0usize; max + 1];
        for fiber in fibers {
            for users in fiber.values() {
                hist[users.len()] += 1;
            }
        }
        hist
    }
}

/// Data units needed but not owned, per rank (x, y) of a slice.
#[derive(Debug, Clone)]
pub struct NeedSets {
    /// `rows[x][y]`: global row ids rank (x, y) needs but does not own.
    pub rows: Vec<Vec<Vec<usize>>>,
    /// `cols[x][y]`: global col ids rank (x, y) needs but does not own.
    pub cols: Vec<Vec<Vec<usize>>>,
}

/// Derives need sets from lambda and per-fiber owner maps.
/// `row_owners[x]` is the owner map of row fiber x; `col_owners[y]` of
/// column fiber y.
pub fn need_sets(
    lambda: &SliceAnalysis,
    grid: &ProcGrid,
    row_owners: &[OwnerMap],
    col_owners: &[OwnerMap],
) -> NeedSets {
    let mut rows = vec![vec![Vec::new(); grid.y]; grid.x];
    let mut cols = vec![vec![Vec::new(); grid.y]; grid.x];
    for (x, fiber) in lambda.row_fibers.iter().enumerate() {
        for (&id, users) in fiber {
            let owner = row_owners[x].owner(id);
            for &y in users {
                if owner != Some(y) {
                    rows[x][y].push(id);
                }
            }
        }
    }
    for (y, fiber) in lambda.col_fibers.iter().enumerate() {
        for (&id, users) in fiber {
            let owner = col_owners[y].owner(id);
            for &x in users {
                if owner != Some(x) {
                    cols[x][y].push(id);
                }
            }
        }
    }
    NeedSets { rows, cols }
}

/// Words received per rank: `(K/Z) * (|needed rows| + |needed cols|)`.
pub fn per_rank_recv_volume(need: &NeedSets, k: usize, z: usize) -> Vec<Vec<usize>> {
    let du = k / z;
    need.rows
        .iter()
        .zip(&need.cols)
        .map(|(rs, cs)| {
            rs.iter()
                .zip(cs)
                .map(|(r, c)| du * (r.len() + c.len()))
                .collect()
        })
        .collect()
}

/// Volume totals of one slice in words, with one data unit = K/Z words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeBreakdown {
    pub row_words: usize,
    pub col_words: usize,
}

impl VolumeBreakdown {
    pub fn total(&self) -> usize {
        self.row_words + self.col_words
    }
}

/// Total sparsity-aware volume of one slice:
/// `(K/Z) * (sum_i (lambda_i - 1) + sum_j (lambda_j - 1))`.
pub fn total_sparse_volume(lambda: &SliceAnalysis, k: usize, z: usize) -> VolumeBreakdown {
    let du = k / z;
    let sum = |fibers: &[FiberLambda]| -> usize {
        fibers
            .iter()
            .flat_map(|f| f.values())
            .map(|users| users.len() - 1)
            .sum()
    };
    VolumeBreakdown {
        row_words: du * sum(&lambda.row_fibers),
        col_words: du * sum(&lambda.col_fibers),
    }
}

/// Entire per-rank dense footprint in words:
/// `(K/Z) * (|needed rows| + |needed cols| + owned rows + owned cols)`.
pub fn sparse_memory(
    need: &NeedSets,
    owned_rows: &[Vec<usize>],
    owned_cols: &[Vec<usize>],
    k: usize,
    z: usize,
) -> Vec<Vec<usize>> {
    let du = k / z;
    need.rows
        .iter()
        .enumerate()
        .map(|(x, rs)| {
            rs.iter()
                .enumerate()
                .map(|(y, r)| {
                    du * (r.len() + need.cols[x][y].len() + owned_rows[x][y] + owned_cols[x][y])
                })
                .collect()
        })
        .collect()
}

/// Sparsity-agnostic algorithm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgnosticModel {
    OneD,
    TwoD,
    ThreeD,
}

fn isqrt_exact(n: usize, what: &str) -> Result<usize> {
    let r = (n as f64).sqrt().round() as usize;
    if r * r == n {
        Ok(r)
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} = {n} is not a perfect square"
        )))
    }
}

fn round_div(num: u128, den: u128) -> usize {
    ((2 * num + den) / (2 * den)) as usize
}

/// Per-rank received volume (words) of the sparsity-agnostic algorithms:
/// 1D: `B*(P-1)/P`; 2D: `(A+B)*(sqrt(P)-1)/P`; 3D: `(A+B)*(sqrt(P/Z)-1)/P`.
pub fn agnostic_volume(
    model: AgnosticModel,
    asize: usize,
    bsize: usize,
    p: usize,
    z: usize,
) -> Result<usize> {
    if p == 0 || z == 0 || !p.is_multiple_of(z) {
        return Err(Error::InvalidConfig(format!("invalid P={p}, Z={z}")));
    }
    let (a, b, p128) = (asize as u128, bsize as u128, p as u128);
    Ok(match model {
        AgnosticModel::OneD => round_div(b * (p128 - 1), p128),
        AgnosticModel::TwoD => {
            let s = isqrt_exact(p, "P")? as u128;
            round_div((a + b) * (s - 1), p128)
        }
        AgnosticModel::ThreeD => {
            let s = isqrt_exact(p / z, "P/Z")? as u128;
            round_div((a + b) * (s - 1), p128)
        }
    })
}

/// Per-rank dense-matrix memory (words) of the sparsity-agnostic algorithms:
/// 1D: `A/P + B`; 2D: `(A+B)/sqrt(P)`; 3D: `(A+B)/(Z*sqrt(P/Z))`.
pub fn agnostic_memory(
    model: AgnosticModel,
    asize: usize,
    bsize: usize,
    p: usize,
    z: usize,
) -> Result<usize> {
    if p == 0 || z == 0 || !p.is_multiple_of(z) {
        return Err(Error::InvalidConfig(format!("invalid P={p}, Z={z}")));
    }
    let (a, b, p128) = (asize as u128, bsize as u128, p as u128);
    Ok(match model {
        AgnosticModel::OneD => round_div(a + b * p128, p128),
        AgnosticModel::TwoD => {
            let s = isqrt_exact(p, "P")? as u128;
            round_div(a + b, s)
        }
        AgnosticModel::ThreeD => {
            let s = isqrt_exact(p / z, "P/Z")? as u128;
            round_div(a + b, z as u128 * s)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dist2d;
    use crate::ownership::assign_owners_serial;
    use crate::rmat::gen_rmat;
    use crate::sparse::{Entry, SparseMatrix};

    fn owners_for(
        lambda: &SliceAnalysis,
        grid: &ProcGrid,
        n: usize,
        m: usize,
        seed: u64,
    ) -> (Vec<OwnerMap>, Vec<OwnerMap>) {
        let row_owners: Vec<OwnerMap> = (0..grid.x)
            .map(|x| {
                let used: Vec<Vec<usize>> = (0..grid.y)
                    .map(|y| {
                        lambda.row_fibers[x]
                            .iter()
                            .filter_map(|(&id, users)| users.contains(&y).then_some(id))
                            .collect()
                    })
                    .collect();
                assign_owners_serial(&used, grid.row_range(n, x), seed + x as u64)
            })
            .collect();
        let col_owners: Vec<OwnerMap> = (0..grid.y)
            .map(|y| {
                let used: Vec<Vec<usize>> = (0..grid.x)
                    .map(|x| {
                        lambda.col_fibers[y]
                            .iter()
                            .filter_map(|(&id, users)| users.contains(&x).then_some(id))
                            .collect()
                    })
                    .collect();
                assign_owners_serial(&used, grid.col_range(m, y), seed + 100 + y as u64)
            })
            .collect();
        (row_owners, col_owners)
    }

    #[test]
    fn dense_matrix_lambda_is_fiber_size() {
        let s = SparseMatrix::dense_pattern(9, 9, 4);
        let grid = ProcGrid::new(3, 3, 1).unwrap();
        let blocks = dist2d(&s, &grid);
        let lambda = compute_lambda(&blocks, &grid);
        for fiber in &lambda.row_fibers {
            for users in fiber.values() {
                assert_eq!(users.len(), 3);
            }
        }
        for fiber in &lambda.col_fibers {
            for users in fiber.values() {
                assert_eq!(users.len(), 3);
            }
        }
    }

    #[test]
    fn single_owner_row_has_lambda_one() {
        let s = SparseMatrix::from_entries(4, 4, vec![Entry::new(0, 0, 1.0)]).unwrap();
        let grid = ProcGrid::new(2, 2, 1).unwrap();
        let lambda = compute_lambda(&dist2d(&s, &grid), &grid);
        assert_eq!(lambda.row_fibers[0][&0], vec![0]);
    }

    #[test]
    fn lambda_matches_brute_force_scan() {
        let s = gen_rmat(5, 100, 8).unwrap();
        let grid = ProcGrid::new(5, 5, 1).unwrap();
        let blocks = dist2d(&s, &grid);
        let lambda = compute_lambda(&blocks, &grid);
        // Brute force over all (row, block) pairs.
        for x in 0..grid.x {
            for i in 0..s.nrows() {
                let mut users = Vec::new();
                for y in 0..grid.y {
                    if blocks[x][y].entries().iter().any(|e| e.row == i) {
                        users.push(y);
                    }
                }
                match lambda.row_fibers[x].get(&i) {
                    Some(got) => assert_eq!(got, &users),
                    None => assert!(users.is_empty()),
                }
            }
        }
    }

    #[test]
    fn lambda_monotone_in_entries() {
        let base = gen_rmat(4, 40, 2).unwrap();
        let grid = ProcGrid::new(2, 2, 1).unwrap();
        let before = compute_lambda(&dist2d(&base, &grid), &grid);
        let mut entries = base.entries().to_vec();
        // Add a nonzero somewhere empty.
        'outer: for i in 0..base.nrows() {
            for j in 0..base.ncols() {
                if !entries.iter().any(|e| e.row == i && e.col == j) {
                    entries.push(Entry::new(i, j, 1.0));
                    break 'outer;
                }
            }
        }
        let bigger = SparseMatrix::from_entries(base.nrows(), base.ncols(), entries).unwrap();
        let after = compute_lambda(&dist2d(&bigger, &grid), &grid);
        for x in 0..grid.x {
            for (id, users) in &before.row_fibers[x] {
                assert!(after.row_fibers[x][id].len() >= users.len());
            }
        }
    }

    #[test]
    fn all_lambda_one_means_zero_volume() {
        // Block-diagonal: each block's rows/cols used by exactly one rank.
        let entries = (0..8).map(|i| Entry::new(i, i, 1.0)).collect();
        let s = SparseMatrix::from_entries(8, 8, entries).unwrap();
        let grid = ProcGrid::new(2, 2, 1).unwrap();
        let lambda = compute_lambda(&dist2d(&s, &grid), &grid);
        let vol = total_sparse_volume(&lambda, 4, 1);
        assert_eq!(vol.total(), 0);
    }

    #[test]
    fn dense_total_volume_equals_agnostic_3d() {
        // 36x36 dense on (3,3,4) with K=8: summing the per-slice lambda
        // totals over Z slices reproduces P times the agnostic 3D per-rank
        // volume exactly.
        let s = SparseMatrix::dense_pattern(36, 36, 1);
        let grid = ProcGrid::new(3, 3, 4).unwrap();
        let (k, z, p) = (8usize, 4usize, 36usize);
        let lambda = compute_lambda(&dist2d(&s, &grid), &grid);
        let sparse_total = z * total_sparse_volume(&lambda, k, z).total();
        let per_rank = agnostic_volume(AgnosticModel::ThreeD, 36 * k, 36 * k, p, z).unwrap();
        assert_eq!(sparse_total, p * per_rank);
    }

    #[test]
    fn per_rank_formula_and_sum_identity() {
        let s = gen_rmat(6, 300, 5).unwrap();
        let grid = ProcGrid::new(2, 2, 1).unwrap();
        let (k, z) = (8, 1);
        let lambda = compute_lambda(&dist2d(&s, &grid), &grid);
        let (row_owners, col_owners) = owners_for(&lambda, &grid, s.nrows(), s.ncols(), 3);
        let need = need_sets(&lambda, &grid, &row_owners, &col_owners);
        let per_rank = per_rank_recv_volume(&need, k, z);
        let total: usize = per_rank.iter().flatten().sum();
        assert_eq!(total, total_sparse_volume(&lambda, k, z).total());
    }

    #[test]
    fn per_rank_direct_evaluation() {
        // |I|=3, |J|=5, K=8, Z=2 -> 32 words.
        let need = NeedSets {
            rows: vec![vec![vec![1, 2, 3]]],
            cols: vec![vec![vec![4, 5, 6, 7, 8]]],
        };
        assert_eq!(per_rank_recv_volume(&need, 8, 2)[0][0], 32);
    }

    #[test]
    fn agnostic_volume_hand_values() {
        assert_eq!(
            agnostic_volume(AgnosticModel::OneD, 0, 100, 4, 1).unwrap(),
            75
        );
        assert_eq!(agnostic_volume(AgnosticModel::TwoD, 8, 8, 4, 1).unwrap(), 4);
        // 3D at Z=1 collapses to 2D.
        for (a, b, p) in [(8, 8, 4), (100, 60, 16), (33, 77, 9)] {
            assert_eq!(
                agnostic_volume(AgnosticModel::ThreeD, a, b, p, 1).unwrap(),
                agnostic_volume(AgnosticModel::TwoD, a, b, p, 1).unwrap()
            );
        }
        assert!(agnostic_volume(AgnosticModel::TwoD, 1, 1, 6, 1).is_err());
    }

    #[test]
    fn agnostic_memory_hand_values() {
        assert_eq!(
            agnostic_memory(AgnosticModel::OneD, 100, 40, 4, 1).unwrap(),
            65
        );
        assert_eq!(
            agnostic_memory(AgnosticModel::ThreeD, 8, 8, 4, 1).unwrap(),
            agnostic_memory(AgnosticModel::TwoD, 8, 8, 4, 1).unwrap()
        );
        // Non-increasing in Z for fixed P (square P/Z only).
        let p = 64;
        let mut last = usize::MAX;
        for z in [1usize, 4, 16, 64] {
            let m = agnostic_memory(AgnosticModel::ThreeD, 4096, 4096, p, z).unwrap();
            assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn sparse_memory_dense_collapse() {
        // 60x60 dense on 3x3 slice with K=8, Z=4: every rank holds its full
        // row/col ranges, matching the agnostic 3D formula exactly.
        let s = SparseMatrix::dense_pattern(60, 60, 9);
        let grid = ProcGrid::new(3, 3, 4).unwrap();
        let (k, z) = (8usize, 4usize);
        let lambda = compute_lambda(&dist2d(&s, &grid), &grid);
        let (row_owners, col_owners) = owners_for(&lambda, &grid, 60, 60, 7);
        let need = need_sets(&lambda, &grid, &row_owners, &col_owners);
        let owned_rows: Vec<Vec<usize>> = (0..grid.x)
            .map(|x| {
                (0..grid.y)
                    .map(|y| row_owners[x].owned_by(y).len())
                    .collect()
            })
            .collect();
        let owned_cols: Vec<Vec<usize>> = (0..grid.x)
            .map(|x| {
                (0..grid.y)
                    .map(|y| col_owners[y].owned_by(x).len())
                    .collect()
            })
            .collect();
        let mem = sparse_memory(&need, &owned_rows, &owned_cols, k, z);
        let formula = agnostic_memory(AgnosticModel::ThreeD, 60 * k, 60 * k, 36, z).unwrap();
        for row in &mem {
            for &m in row {
                assert_eq!(m, formula);
            }
        }
    }

    #[test]
    fn rank_with_nothing_has_zero_footprint() {
        let need = NeedSets {
            rows: vec![vec![vec![]]],
            cols: vec![vec![vec![]]],
        };
        assert_eq!(sparse_memory(&need, &[vec![0]], &[vec![0]], 8, 2)[0][0], 0);
    }
}
