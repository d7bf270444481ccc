use serde::{Deserialize, Serialize};

use super::filter::{low_pass_halve, low_pass_halve_adjoint, FilterKind, FilterSpec};
use super::VoxelGrid;
use crate::error::{Error, Result};

fn half_dims(dims: [usize; 3]) -> [usize; 3] {
    [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)]
}

/// Halves the resolution on every axis.
///
/// Each output voxel averages the 2x2x2 source block under it; on odd axes the
/// final output voxel replicates the last source voxel. Under the voxel-center
/// convention this is the trilinear sample of the source at the output center.
pub fn downsample_half(grid: &VoxelGrid) -> Result<VoxelGrid> {
    let dims = grid.dims();
    if dims.iter().any(|&n| n < 2) {
        return Err(Error::InvalidGrid(format!(
            "downsampling needs every dim >= 2, got {dims:?}"
        )));
    }
    let out_dims = half_dims(dims);
    let [ox, oy, oz] = out_dims;
    let mut out = VoxelGrid::zeros(grid.channels(), out_dims, *grid.bbox())?;
    let src = |j: usize, n: usize| (2 * j, (2 * j + 1).min(n - 1));
    for c in 0..grid.channels() {
        for z in 0..oz {
            let (z0, z1) = src(z, dims[2]);
            for y in 0..oy {
                let (y0, y1) = src(y, dims[1]);
                for x in 0..ox {
                    let (x0, x1) = src(x, dims[0]);
                    let g = |x, y, z| grid.get(c, x, y, z);
                    // Pairwise sums keep constants and dyadic values exact.
                    let s = ((g(x0, y0, z0) + g(x1, y0, z0)) + (g(x0, y1, z0) + g(x1, y1, z0)))
                        + ((g(x0, y0, z1) + g(x1, y0, z1)) + (g(x0, y1, z1) + g(x1, y1, z1)));
                    out.set(c, x, y, z, s * 0.125);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`downsample_half`]: spreads an output-shaped gradient back onto
/// a source grid of `src_dims`.
pub fn downsample_half_adjoint(grad_out: &[f64], channels: usize, src_dims: [usize; 3]) -> Vec<f64> {
    let out_dims = half_dims(src_dims);
    let [sx, sy, sz] = src_dims;
    let [ox, oy, oz] = out_dims;
    let mut grad = vec![0.0; channels * sx * sy * sz];
    let src = |j: usize, n: usize| [2 * j, (2 * j + 1).min(n - 1)];
    for c in 0..channels {
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let g = grad_out[((c * oz + z) * oy + y) * ox + x];
                    if g == 0.0 {
                        continue;
                    }
                    let g8 = g * 0.125;
                    for zz in src(z, sz) {
                        for yy in src(y, sy) {
                            for xx in src(x, sx) {
                                grad[((c * sz + zz) * sy + yy) * sx + xx] += g8;
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// A level-0 grid plus its filtered, downsampled levels.
///
/// Levels above zero are derived data: they are only ever produced by
/// [`MipPyramid::rebuild`], never edited directly.
#[derive(Debug, Clone, PartialEq)]
pub struct MipPyramid {
    levels: Vec<VoxelGrid>,
    filter: FilterSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelShape {
    pub channels: usize,
    pub dims: [usize; 3],
}

impl MipPyramid {
    pub fn build(level0: VoxelGrid, filter: FilterSpec, levels: usize) -> Result<Self> {
        filter.validate()?;
        Self::check_depth(level0.dims(), levels)?;
        let mut pyr = Self {
            levels: vec![level0],
            filter,
        };
        pyr.extend_to(levels)?;
        Ok(pyr)
    }

    /// Dims of every level for a level-0 grid of `dims`.
    pub fn level_dims(dims: [usize; 3], levels: usize) -> Result<Vec<[usize; 3]>> {
        Self::check_depth(dims, levels)?;
        let mut out = vec![dims];
        for _ in 1..levels {
            out.push(half_dims(*out.last().unwrap()));
        }
        Ok(out)
    }

    fn check_depth(dims: [usize; 3], levels: usize) -> Result<()> {
        if levels == 0 {
            return Err(Error::PyramidTooDeep { levels, dims });
        }
        let mut d = dims;
        for _ in 0..levels - 1 {
            if d.iter().any(|&n| n < 2) {
                return Err(Error::PyramidTooDeep { levels, dims });
            }
            d = half_dims(d);
        }
        Ok(())
    }

    fn extend_to(&mut self, levels: usize) -> Result<()> {
        while self.levels.len() < levels {
            let prev = self.levels.last().unwrap();
            let next = if self.filter.kind == FilterKind::None {
                downsample_half(prev)?
            } else {
                let dims = prev.dims();
                if dims.iter().any(|&n| n < 2) {
                    return Err(Error::InvalidGrid(format!(
                        "downsampling needs every dim >= 2, got {dims:?}"
                    )));
                }
                let values = low_pass_halve(prev.values(), prev.channels(), dims, &self.filter.taps()?);
                VoxelGrid::from_values(prev.channels(), half_dims(dims), *prev.bbox(), values)?
            };
            self.levels.push(next);
        }
        Ok(())
    }

    /// Recomputes every derived level from level 0.
    pub fn rebuild(&mut self) -> Result<()> {
        let n = self.levels.len();
        self.levels.truncate(1);
        self.extend_to(n)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &VoxelGrid {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[VoxelGrid] {
        &self.levels
    }

    pub fn level0(&self) -> &VoxelGrid {
        &self.levels[0]
    }

    /// Mutable access to level 0. Call [`MipPyramid::rebuild`] afterwards.
    pub fn level0_mut(&mut self) -> &mut VoxelGrid {
        &mut self.levels[0]
    }

    pub fn filter(&self) -> &FilterSpec {
        &self.filter
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels()
    }

    pub fn shapes(&self) -> Vec<LevelShape> {
        self.levels
            .iter()
            .map(|g| LevelShape {
                channels: g.channels(),
                dims: g.dims(),
            })
            .collect()
    }

    pub fn into_level0(mut self) -> VoxelGrid {
        self.levels.swap_remove(0)
    }
}

/// Per-level gradient buffers for a pyramid.
///
/// Samples scatter into whichever level they read from; [`PyramidGrad::reduce`]
/// then pulls everything back to level 0 through the adjoints of the
/// downsample and filter.
#[derive(Debug, Clone)]
pub struct PyramidGrad {
    shapes: Vec<LevelShape>,
    filter: FilterSpec,
    bufs: Vec<Vec<f64>>,
    touched: Vec<bool>,
}

impl PyramidGrad {
    pub fn new(pyr: &MipPyramid) -> Self {
        let shapes = pyr.shapes();
        let bufs = shapes
            .iter()
            .map(|s| vec![0.0; s.channels * s.dims[0] * s.dims[1] * s.dims[2]])
            .collect();
        Self {
            touched: vec![false; shapes.len()],
            shapes,
            filter: *pyr.filter(),
            bufs,
        }
    }

    pub fn zero(&mut self) {
        for (b, t) in self.bufs.iter_mut().zip(self.touched.iter_mut()) {
            if *t {
                b.iter_mut().for_each(|v| *v = 0.0);
                *t = false;
            }
        }
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        self.touched[k] = true;
        &mut self.bufs[k]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.bufs[k]
    }

    pub fn num_levels(&self) -> usize {
        self.bufs.len()
    }

    /// Folds all levels into level 0 and returns it. Derived-level buffers are
    /// cleared.
    pub fn reduce(&mut self) -> Result<&[f64]> {
        for k in (1..self.bufs.len()).rev() {
            if !self.touched[k] {
                continue;
            }
            let below = self.shapes[k - 1];
            let g = if self.filter.kind == FilterKind::None {
                downsample_half_adjoint(&self.bufs[k], below.channels, below.dims)
            } else {
                low_pass_halve_adjoint(&self.bufs[k], below.channels, below.dims, &self.filter.taps()?)
            };
            for (dst, v) in self.bufs[k - 1].iter_mut().zip(&g) {
                *dst += v;
            }
            self.touched[k - 1] = true;
            self.bufs[k].iter_mut().for_each(|v| *v = 0.0);
            self.touched[k] = false;
        }
        Ok(&self.bufs[0])
    }

    pub fn level0(&self) -> &[f64] {
        &self.bufs[0]
    }
}
