//! Deterministic grid segmentation: a near-uniform tiling that stands in
//! for superpixels so surrogate explainers have a fixed granularity.

use serde::{Deserialize, Serialize};

use super::{ExplainError, ExplainResult};

/// Per-pixel segment labels over an image plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    segment_count: usize,
}

impl Segmentation {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    #[inline]
    pub fn label_at(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Pixel count per segment.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.segment_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Tiles the plane with `cells_per_side` x `cells_per_side` rectangular
/// cells of near-equal size; remainder pixels are absorbed by the last
/// row/column of cells.
pub fn grid_segmentation(
    height: usize,
    width: usize,
    cells_per_side: usize,
) -> ExplainResult<Segmentation> {
    if cells_per_side == 0 || cells_per_side > height.min(width) {
        return Err(ExplainError::InvalidConfig(format!(
            "cells_per_side {cells_per_side} outside [1, min({height},{width})]"
        )));
    }
    let cell_h = height / cells_per_side;
    let cell_w = width / cells_per_side;
    let mut labels = vec![0usize; height * width];
    for (r, row) in labels.chunks_mut(width).enumerate() {
        let cell_row = (r / cell_h).min(cells_per_side - 1);
        for (c, label) in row.iter_mut().enumerate() {
            let cell_col = (c / cell_w).min(cells_per_side - 1);
            *label = cell_row * cells_per_side + cell_col;
        }
    }
    Ok(Segmentation {
        height,
        width,
        labels,
        segment_count: cells_per_side * cells_per_side,
    })
}
