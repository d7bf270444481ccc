//! Dense voxel grids and their mip pyramids.
//!
//! A [`VoxelGrid`] stores `D` channels of raw (pre-activation) scalars over
//! an axis-aligned box. Values are laid out channel-major with x fastest:
//! `index(c, x, y, z) = ((c * nz + z) * ny + y) * nx + x`.
//!
//! Sampling follows the voxel-center convention: voxel `i` along an axis of
//! `n` voxels sits at unit coordinate `(i + 0.5) / n`.

mod filter;
mod pyramid;
mod sample;
mod snapshot;

pub use filter::{low_pass, low_pass_adjoint, FilterKind, FilterSpec};
pub use pyramid::{
    downsample_half, downsample_half_adjoint, MipPyramid, PyramidGrad,
};
pub use sample::{
    lod_weights, quadrilinear_backward, quadrilinear_sample, trilinear_sample, GridSample,
    Stencil,
};
pub(crate) use sample::{backward_levels, sample_levels};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use crate::error::{Error, Result};
use crate::geometry::Aabb;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    channels: usize,
    dims: [usize; 3],
    values: Vec<f64>,
    bbox: Aabb,
}

impl VoxelGrid {
    /// Zero-filled grid.
    pub fn zeros(channels: usize, dims: [usize; 3], bbox: Aabb) -> Result<Self> {
        Self::filled(channels, dims, bbox, 0.0)
    }

    pub fn filled(channels: usize, dims: [usize; 3], bbox: Aabb, value: f64) -> Result<Self> {
        Self::check_shape(channels, dims, &bbox)?;
        let len = channels * dims[0] * dims[1] * dims[2];
        Ok(Self {
            channels,
            dims,
            values: vec![value; len],
            bbox,
        })
    }

    pub fn from_values(
        channels: usize,
        dims: [usize; 3],
        bbox: Aabb,
        values: Vec<f64>,
    ) -> Result<Self> {
        Self::check_shape(channels, dims, &bbox)?;
        let len = channels * dims[0] * dims[1] * dims[2];
        if values.len() != len {
            return Err(Error::InvalidGrid(format!(
                "expected {len} values for {channels}x{dims:?}, got {}",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            dims,
            values,
            bbox,
        })
    }

    /// Builds a grid by evaluating `f(channel, x, y, z)` at every voxel.
    pub fn from_fn(
        channels: usize,
        dims: [usize; 3],
        bbox: Aabb,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut g = Self::zeros(channels, dims, bbox)?;
        for c in 0..channels {
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let i = g.index(c, x, y, z);
                        g.values[i] = f(c, x, y, z);
                    }
                }
            }
        }
        Ok(g)
    }

    // Pyramid tails may shrink to a single voxel, so storage accepts dims >= 1;
    // operations that need two voxels per axis check for themselves.
    fn check_shape(channels: usize, dims: [usize; 3], bbox: &Aabb) -> Result<()> {
        if channels == 0 {
            return Err(Error::InvalidGrid("channel count must be positive".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        if dims.iter().any(|&n| n > u32::MAX as usize) {
            return Err(Error::InvalidGrid(format!("dims too large: {dims:?}")));
        }
        bbox.validate()
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims[2] + z) * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(c, x, y, z);
        self.values[i] = v;
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Number of voxels in one channel.
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxel_count();
        &self.values[c * n..(c + 1) * n]
    }

    /// World-space voxel edge length per axis.
    pub fn voxel_size(&self) -> [f64; 3] {
        let e = self.bbox.extent();
        [
            e[0] / self.dims[0] as f64,
            e[1] / self.dims[1] as f64,
            e[2] / self.dims[2] as f64,
        ]
    }

    /// Unit coordinates of the center of voxel `(x, y, z)`.
    pub fn voxel_center_unit(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5) / self.dims[0] as f64,
            (y as f64 + 0.5) / self.dims[1] as f64,
            (z as f64 + 0.5) / self.dims[2] as f64,
        ]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn same_shape(&self, other: &VoxelGrid) -> bool {
        self.channels == other.channels && self.dims == other.dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_layout_is_x_fastest_channel_slowest() {
        let g = VoxelGrid::zeros(2, [3, 4, 5], Aabb::unit()).unwrap();
        assert_eq!(g.index(0, 1, 0, 0), 1);
        assert_eq!(g.index(0, 0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 0, 1), 12);
        assert_eq!(g.index(1, 0, 0, 0), 60);
        assert_eq!(g.values().len(), 120);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(VoxelGrid::zeros(0, [2, 2, 2], Aabb::unit()).is_err());
        assert!(VoxelGrid::zeros(1, [2, 0, 2], Aabb::unit()).is_err());
        assert!(VoxelGrid::from_values(1, [2, 2, 2], Aabb::unit(), vec![0.0; 7]).is_err());
        let flat = Aabb {
            min: [0.0; 3],
            max: [1.0, 1.0, 0.0],
        };
        assert!(VoxelGrid::zeros(1, [2, 2, 2], flat).is_err());
    }
}
