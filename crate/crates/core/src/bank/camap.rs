use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{resample_bilinear_to, LatentGrid};

/// Row-stochastic map from spatial patches to condition tokens.
///
/// Rows are patches of a `grid_h x grid_w` tiling in row-major order;
/// columns follow `classes`, which is sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq)]
pub struct CAMap {
    grid_h: usize,
    grid_w: usize,
    classes: Vec<u32>,
    values: Vec<f64>,
}

/// Row sums may deviate from 1 by at most this much on construction.
const ROW_SUM_TOL: f64 = 1e-9;

impl CAMap {
    pub fn new(grid_h: usize, grid_w: usize, classes: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || classes.is_empty() {
            return Err(Error::invalid(
                "CA map needs at least one patch and one class",
            ));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("CA map classes must be sorted and distinct"));
        }
        if values.len() != grid_h * grid_w * classes.len() {
            return Err(Error::invalid(
                "CA map value count does not match its shape",
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "CA map values must be finite and non-negative",
            ));
        }
        let map = Self {
            grid_h,
            grid_w,
            classes,
            values,
        };
        if map.max_row_sum_error() > ROW_SUM_TOL {
            return Err(Error::invalid("CA map rows must sum to 1"));
        }
        Ok(map)
    }

    /// Every row equal to `1 / K`.
    pub fn uniform(grid_h: usize, grid_w: usize, classes: Vec<u32>) -> Result<Self> {
        let k = classes.len().max(1);
        let values = alloc::vec![1.0 / k as f64; grid_h * grid_w * k];
        Self::new(grid_h, grid_w, classes, values)
    }

    pub(crate) fn from_parts_unchecked(
        grid_h: usize,
        grid_w: usize,
        classes: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        Self {
            grid_h,
            grid_w,
            classes,
            values,
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn rows(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn cols(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.cols();
        &self.values[r * k..(r + 1) * k]
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .chunks(self.cols())
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn same_shape(&self, other: &CAMap) -> Result<()> {
        if self.grid() != other.grid() || self.classes != other.classes {
            return Err(Error::invalid("CA maps have different shapes"));
        }
        Ok(())
    }

    /// Bilinear resampling over the patch grid, one class column at a
    /// time, followed by per-row renormalization.
    pub fn resample_rows(&self, grid_h: usize, grid_w: usize) -> Result<CAMap> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::invalid("patch grid must be non-empty"));
        }
        if (grid_h, grid_w) == self.grid() {
            return Ok(self.clone());
        }
        let k = self.cols();
        let planes = LatentGrid::from_fn(k, self.grid_h, self.grid_w, |c, y, x| {
            self.values[(y * self.grid_w + x) * k + c]
        });
        let up = resample_bilinear_to(&planes, grid_h, grid_w);
        let n = grid_h * grid_w;
        let mut values = alloc::vec![0.0; n * k];
        for r in 0..n {
            let row = &mut values[r * k..(r + 1) * k];
            for (c, v) in row.iter_mut().enumerate() {
                *v = up.channel(c)[r];
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self::from_parts_unchecked(
            grid_h,
            grid_w,
            self.classes.clone(),
            values,
        ))
    }
}
