//! Processor grid construction and sparse matrix distribution.
//!
//! The grid is X x Y x Z with rank linearization z-fastest. A matrix is
//! distributed by contiguous near-equal row/column range splits into X x Y
//! blocks (Dist2D), each block then chunked into Z near-equal contiguous
//! pieces of its row-major entry list (Dist3D). A per-rank piece is localized
//! by compacting row/column indices and keeping global<->local maps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::{Entry, SparseMatrix};

/// X x Y x Z processor grid. Rank r <-> (x, y, z) with r = x*(Y*Z) + y*Z + z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcGrid {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl ProcGrid {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::InvalidConfig("grid dimensions must be >= 1".into()));
        }
        Ok(ProcGrid { x, y, z })
    }

    pub fn size(&self) -> usize {
        self.x * self.y * self.z
    }

    pub fn rank_of(&self, x: usize, y: usize, z: usize) -> usize {
        x * (self.y * self.z) + y * self.z + z
    }

    pub fn coords_of(&self, rank: usize) -> (usize, usize, usize) {
        let x = rank / (self.y * self.z);
        let rem = rank % (self.y * self.z);
        (x, rem / self.z, rem % self.z)
    }

    /// Contiguous near-equal split of [0, n) into `parts`; remainder spread
    /// over the leading parts.
    pub fn range_of(n: usize, parts: usize, idx: usize) -> std::ops::Range<usize> {
        let base = n / parts;
        let rem = n % parts;
        let start = idx * base + idx.min(rem);
        let len = base + usize::from(idx < rem);
        start..start + len
    }

    pub fn row_range(&self, nrows: usize, x: usize) -> std::ops::Range<usize> {
        Self::range_of(nrows, self.x, x)
    }

    pub fn col_range(&self, ncols: usize, y: usize) -> std::ops::Range<usize> {
        Self::range_of(ncols, self.y, y)
    }
}

/// Builds the grid for P ranks with the given Z: X*Y = P/Z with (X, Y) the
/// most-square factor pair, X >= Y.
pub fn make_grid(p: usize, z: usize) -> Result<ProcGrid> {
    if p == 0 || z == 0 || !p.is_multiple_of(z) {
        return Err(Error::InvalidConfig(format!("Z={z} does not divide P={p}")));
    }
    let slice = p / z;
    let mut y = (slice as f64).sqrt() as usize;
    while y > 1 && !slice.is_multiple_of(y) {
        y -= 1;
    }
    let y = y.max(1);
    let x = slice / y;
    ProcGrid::new(x, y, z)
}

/// Dist2D: block (x, y) holds the entries with row in row-range(x) and col in
/// col-range(y). Returned as a row-major X x Y array of blocks, each sorted.
pub fn dist2d(s: &SparseMatrix, grid: &ProcGrid) -> Vec<Vec<SparseMatrix>> {
    let mut buckets: Vec<Vec<Vec<Entry>>> = vec![vec![Vec::new(); grid.y]; grid.x];
    let row_of = |i: usize| block_index(i, s.nrows(), grid.x);
    let col_of = |j: usize| block_index(j, s.ncols(), grid.y);
    let entries: Vec<Entry> = if s.is_sorted() {
        s.entries().to_vec()
    } else {
        let mut v = s.entries().to_vec();
        v.sort_by_key(|e| (e.row, e.col));
        v
    };
    for e in entries {
        buckets[row_of(e.row)][col_of(e.col)].push(e);
    }
    buckets
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|b| SparseMatrix::from_sorted_unchecked(s.nrows(), s.ncols(), b))
                .collect()
        })
        .collect()
}

/// Index of the near-equal contiguous part of [0, n) that `v` falls into.
fn block_index(v: usize, n: usize, parts: usize) -> usize {
    let base = n / parts;
    let rem = n % parts;
    let boundary = rem * (base + 1);
    if v < boundary {
        v / (base + 1)
    } else {
        rem + (v - boundary) / base.max(1)
    }
}

/// Dist3D nonzero-space split: Z contiguous chunks of the sorted entry list
/// with sizes differing by at most one.
pub fn split_z(block: &SparseMatrix, z: usize) -> Vec<SparseMatrix> {
    debug_assert!(block.is_sorted());
    let entries = block.entries();
    (0..z)
        .map(|i| {
            let r = ProcGrid::range_of(entries.len(), z, i);
            SparseMatrix::from_sorted_unchecked(block.nrows(), block.ncols(), entries[r].to_vec())
        })
        .collect()
}

/// A localized sparse piece: entries use dense local indices; the maps
/// translate between local and global index spaces.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub coords: (usize, usize, usize),
    pub entries: Vec<LocalEntry>,
    /// Local row -> global row; strictly increasing.
    pub row_global: Vec<usize>,
    /// Local col -> global col; strictly increasing.
    pub col_global: Vec<usize>,
    /// Global row -> local row (only for rows present in the block).
    pub row_local: HashMap<usize, usize>,
    /// Global col -> local col.
    pub col_local: HashMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEntry {
    pub row: usize,
    pub col: usize,
    pub val: f64,
}

impl LocalBlock {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Applies the global maps to every entry, reconstructing the global part.
    pub fn delocalize(&self, nrows: usize, ncols: usize) -> SparseMatrix {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry::new(self.row_global[e.row], self.col_global[e.col], e.val))
            .collect();
        SparseMatrix::from_sorted_unchecked(nrows, ncols, entries)
    }
}

/// Localizes a sparse part: row/col indices compacted to [0, #distinct),
/// empty rows and columns dropped by construction. Entry order is preserved.
pub fn localize(part: &SparseMatrix) -> LocalBlock {
    localize_at(part, (0, 0, 0))
}

pub fn localize_at(part: &SparseMatrix, coords: (usize, usize, usize)) -> LocalBlock {
    let mut rows: Vec<usize> = part.entries().iter().map(|e| e.row).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut cols: Vec<usize> = part.entries().iter().map(|e| e.col).collect();
    cols.sort_unstable();
    cols.dedup();
    let row_local: HashMap<usize, usize> = rows.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let col_local: HashMap<usize, usize> = cols.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let entries = part
        .entries()
        .iter()
        .map(|e| LocalEntry {
            row: row_local[&e.row],
            col: col_local[&e.col],
            val: e.val,
        })
        .collect();
    LocalBlock {
        coords,
        entries,
        row_global: rows,
        col_global: cols,
        row_local,
        col_local,
    }
}
