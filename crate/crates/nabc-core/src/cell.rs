use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Address of a strictly-lower-triangle cell, 1-based: `1 <= col < row <= dim`.
///
/// All public formulas and documentation use this 1-based convention; the
/// 0-based arithmetic lives behind the accessors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if col >= 1 && col < row {
            Ok(CellIndex { row, col })
        } else {
            Err(Error::InvalidCell { row, col })
        }
    }

    /// 0-based row index.
    pub fn i(&self) -> usize {
        self.row - 1
    }

    /// 0-based column index.
    pub fn j(&self) -> usize {
        self.col - 1
    }

    /// Position of this cell in the canonical row-major walk of the lower
    /// triangle: (2,1), (3,1), (3,2), (4,1), ... Used as the storage order
    /// for per-cell arrays everywhere in the crate.
    pub fn linear_index(&self) -> usize {
        let i = self.i();
        i * (i - 1) / 2 + self.j()
    }
}

impl std::fmt::Display for CellIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// All lower-triangle cells of a `dim`-sized matrix in canonical order.
pub fn lower_triangle_cells(dim: usize) -> Vec<CellIndex> {
    let mut cells = Vec::with_capacity(dim * (dim.saturating_sub(1)) / 2);
    for row in 2..=dim {
        for col in 1..row {
            cells.push(CellIndex { row, col });
        }
    }
    cells
}

/// Number of lower-triangle cells for a `dim`-sized matrix.
pub fn cell_count(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}
