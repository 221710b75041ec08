//! Patch-grid geometry.

use serde::{Deserialize, Serialize};

/// Row-major patch grid of an image resized to `rows * t` by `cols * t` pixels.
///
/// Node `i` of a patch graph sits at `(i / cols, i % cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// 4-neighbours of `index`, in up/left/right/down order.
    pub fn neighbors4(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = self.cell(index);
        let up = (r > 0).then(|| index - self.cols);
        let left = (c > 0).then(|| index - 1);
        let right = (c + 1 < self.cols).then(|| index + 1);
        let down = (r + 1 < self.rows).then(|| index + self.cols);
        [up, left, right, down].into_iter().flatten()
    }
}
