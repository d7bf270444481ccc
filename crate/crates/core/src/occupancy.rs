//! Coarse boolean occupancy used to skip empty space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMask {
    pub dims: [usize; 3],
    pub bbox: Aabb,
    pub dilation: usize,
    cells: Vec<bool>,
}

impl OccupancyMask {
    pub fn full(dims: [usize; 3], bbox: Aabb) -> Self {
        Self {
            dims,
            bbox,
            dilation: 0,
            cells: vec![true; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_cells(dims: [usize; 3], bbox: Aabb, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "occupancy for {dims:?} needs {} cells, got {}",
                dims[0] * dims[1] * dims[2],
                cells.len()
            )));
        }
        Ok(Self {
            dims,
            bbox,
            dilation: 0,
            cells,
        })
    }

    /// Thresholds per-cell values (`value > threshold`) then dilates by a cube
    /// of the given radius.
    pub fn from_threshold(
        dims: [usize; 3],
        bbox: Aabb,
        values: &[f64],
        threshold: f64,
        dilation: usize,
    ) -> Result<Self> {
        let cells = values.iter().map(|&v| v > threshold).collect();
        Ok(Self::from_cells(dims, bbox, cells)?.dilated(dilation))
    }

    /// Cube dilation: a cell becomes occupied if any cell within `radius`
    /// (Chebyshev distance) is occupied.
    pub fn dilated(&self, radius: usize) -> Self {
        let mut out = self.clone();
        out.dilation = self.dilation + radius;
        if radius == 0 {
            return out;
        }
        let [nx, ny, nz] = self.dims;
        // Separable max filter along each axis.
        let mut cur = self.cells.clone();
        for axis in 0..3 {
            let mut next = vec![false; cur.len()];
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let i = (z * ny + y) * nx + x;
                        if !cur[i] {
                            continue;
                        }
                        let c = [x, y, z][axis];
                        let n = self.dims[axis];
                        let lo = c.saturating_sub(radius);
                        let hi = (c + radius).min(n - 1);
                        for v in lo..=hi {
                            let mut p = [x, y, z];
                            p[axis] = v;
                            next[(p[2] * ny + p[1]) * nx + p[0]] = true;
                        }
                    }
                }
            }
            cur = next;
        }
        out.cells = cur;
        out
    }

    #[inline]
    pub fn cell_of(&self, uvw: [f64; 3]) -> usize {
        let c = |u: f64, n: usize| ((u * n as f64) as usize).min(n - 1);
        let (x, y, z) = (c(uvw[0], self.dims[0]), c(uvw[1], self.dims[1]), c(uvw[2], self.dims[2]));
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Whether the coarse cell containing unit point `uvw` is occupied.
    #[inline]
    pub fn is_occupied(&self, uvw: [f64; 3]) -> bool {
        self.cells[self.cell_of(uvw)]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.cells.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.cells.iter().map(|&c| c as u8).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_grows_a_cube() {
        let mut cells = vec![false; 125];
        cells[(2 * 5 + 2) * 5 + 2] = true;
        let m = OccupancyMask::from_cells([5, 5, 5], Aabb::unit(), cells).unwrap();
        assert_eq!(m.dilated(1).occupied_count(), 27);
        assert_eq!(m.dilated(2).occupied_count(), 125);
        assert_eq!(m.dilated(1).dilation, 1);
    }

    #[test]
    fn dilation_clips_at_edges() {
        let mut cells = vec![false; 64];
        cells[0] = true;
        let m = OccupancyMask::from_cells([4, 4, 4], Aabb::unit(), cells).unwrap();
        assert_eq!(m.dilated(1).occupied_count(), 8);
    }

    #[test]
    fn threshold_is_strict() {
        let m = OccupancyMask::from_threshold([2, 1, 1], Aabb::unit(), &[1e-3, 2e-3], 1e-3, 0).unwrap();
        assert_eq!(m.cells(), &[false, true]);
    }

    #[test]
    fn cell_lookup() {
        let m = OccupancyMask::full([4, 2, 2], Aabb::unit());
        assert_eq!(m.cell_of([0.0, 0.0, 0.0]), 0);
        assert_eq!(m.cell_of([1.0, 1.0, 1.0]), 15);
        assert_eq!(m.cell_of([0.3, 0.0, 0.0]), 1);
    }
}
