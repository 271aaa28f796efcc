//! Square pixel grids and the images living on them.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A square pixel grid: the reconstruction target lives in `R^n` with
/// `n = side * side`, laid out row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub side: usize,
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn new(side: usize) -> Result<Self> {
        Self::with_pixel_size(side, 1.0)
    }

    pub fn with_pixel_size(side: usize, pixel_size: f64) -> Result<Self> {
        if side < 2 {
            return Err(invalid(format!("grid side must be >= 2, got {side}")));
        }
        if !(pixel_size > 0.0) {
            return Err(invalid(format!("pixel size must be > 0, got {pixel_size}")));
        }
        Ok(Self { side, pixel_size })
    }

    /// Image dimension `n = side^2`.
    pub fn n(&self) -> usize {
        self.side * self.side
    }

    /// Half-diagonal of the grid in physical units; the detector array
    /// spans the circumscribed circle of this radius.
    pub fn circumradius(&self) -> f64 {
        self.side as f64 * self.pixel_size * std::f64::consts::SQRT_2 / 2.0
    }

    /// x-coordinate of the center of column `j` (grid centered at origin).
    pub fn col_center(&self, j: usize) -> f64 {
        (j as f64 - (self.side as f64 - 1.0) / 2.0) * self.pixel_size
    }

    /// y-coordinate of the center of row `i` (row 0 on top).
    pub fn row_center(&self, i: usize) -> f64 {
        ((self.side as f64 - 1.0) / 2.0 - i as f64) * self.pixel_size
    }
}

/// An image on a grid, stored as a flat row-major vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub grid: ImageGrid,
    pub data: Array1<f64>,
}

impl Image {
    pub fn new(grid: ImageGrid, data: Array1<f64>) -> Result<Self> {
        if data.len() != grid.n() {
            return Err(crate::error::dim_mismatch(format!(
                "image has {} values, grid expects {}",
                data.len(),
                grid.n()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            data: Array1::zeros(grid.n()),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.grid.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.grid.side + col] = v;
    }
}
