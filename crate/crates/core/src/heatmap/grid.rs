use serde::{Deserialize, Serialize};

use super::HeatmapError;
use crate::PitchDims;

pub const ROWS: usize = 35;
pub const COLS: usize = 50;
pub const CELLS: usize = ROWS * COLS;

/// Axis-aligned extent of a grid: columns run along x, rows along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn pitch(dims: PitchDims) -> Self {
        Self {
            x_min: 0.0,
            x_max: dims.length,
            y_min: 0.0,
            y_max: dims.width,
        }
    }

    /// Velocity rectangle, m/s.
    pub fn direction(max_vx: f64, max_vy: f64) -> Self {
        Self {
            x_min: -max_vx,
            x_max: max_vx,
            y_min: -max_vy,
            y_max: max_vy,
        }
    }

    /// Cell of a point inside the closed rectangle. Cells are half-open
    /// except the last row/column, which also takes the upper edge.
    pub fn cell(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !(p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max) {
            return None;
        }
        Some((
            bin(p[1], self.y_min, self.y_max, ROWS),
            bin(p[0], self.x_min, self.x_max, COLS),
        ))
    }

    /// Cell of the nearest point of the rectangle.
    pub fn clamped_cell(&self, p: [f64; 2]) -> (usize, usize) {
        let x = p[0].clamp(self.x_min, self.x_max);
        let y = p[1].clamp(self.y_min, self.y_max);
        (bin(y, self.y_min, self.y_max, ROWS), bin(x, self.x_min, self.x_max, COLS))
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    (((v - lo) * n as f64 / (hi - lo)).floor() as usize).min(n - 1)
}

/// 35×50 count grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    bounds: Bounds,
    cells: Vec<u32>,
    total: u64,
}

impl HeatmapGrid {
    pub fn zeros(bounds: Bounds) -> Self {
        Self {
            bounds,
            cells: vec![0; CELLS],
            total: 0,
        }
    }

    pub fn from_cells(bounds: Bounds, cells: Vec<u32>) -> Result<Self, HeatmapError> {
        if cells.len() != CELLS {
            return Err(HeatmapError::CellCount(cells.len()));
        }
        let total = cells.iter().map(|&c| u64::from(c)).sum();
        Ok(Self { bounds, cells, total })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.cells[row * COLS + col]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn increment(&mut self, (row, col): (usize, usize)) {
        self.cells[row * COLS + col] += 1;
        self.total += 1;
    }

    /// Cellwise sum. Both grids must share bounds.
    pub fn add(&self, other: &HeatmapGrid) -> Result<HeatmapGrid, HeatmapError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &HeatmapGrid) -> Result<(), HeatmapError> {
        if self.bounds != other.bounds {
            return Err(HeatmapError::BoundsMismatch);
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Counts divided by the total; all zeros for an empty grid.
    pub fn normalized(&self) -> Vec<f32> {
        if self.total == 0 {
            return vec![0.0; CELLS];
        }
        let t = self.total as f64;
        self.cells.iter().map(|&c| (f64::from(c) / t) as f32).collect()
    }
}

/// Location grid over the pitch. Points outside `[0,L]×[0,W]` are dropped;
/// the second value is the number dropped.
pub fn location_heatmap<I>(positions: I, dims: PitchDims) -> (HeatmapGrid, usize)
where
    I: IntoIterator<Item = [f64; 2]>,
{
    let mut grid = HeatmapGrid::zeros(Bounds::pitch(dims));
    let mut dropped = 0;
    for p in positions {
        match grid.bounds.cell(p) {
            Some(c) => grid.increment(c),
            None => dropped += 1,
        }
    }
    (grid, dropped)
}

/// Grid of velocity endpoints with speed at least `threshold`; endpoints
/// outside the rectangle land in the nearest boundary cell.
pub fn direction_heatmap<I>(velocities: I, threshold: f64, bounds: Bounds) -> HeatmapGrid
where
    I: IntoIterator<Item = [f64; 2]>,
{
    let mut grid = HeatmapGrid::zeros(bounds);
    for v in velocities {
        if v[0].hypot(v[1]) >= threshold {
            grid.increment(bounds.clamped_cell(v));
        }
    }
    grid
}
