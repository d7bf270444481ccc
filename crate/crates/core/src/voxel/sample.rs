//! Trilinear and quadrilinear (trilinear across two mip levels) sampling.

use super::{MipPyramid, PyramidGrad, VoxelGrid};
use crate::error::{Error, Result};

/// The eight trilinear taps for one point on one grid.
///
/// Corner order is x-bit 0, y-bit 1, z-bit 2. Indices are voxel offsets within
/// a single channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub frac: [f64; 3],
}

#[inline]
fn axis_tap(u: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let p = (u * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Stencil {
    /// Stencil for unit coordinates `uvw` on a grid of `dims`. Coordinates are
    /// clamped to the range spanned by voxel centers.
    #[inline]
    pub fn new(dims: [usize; 3], uvw: [f64; 3]) -> Self {
        let (x0, x1, fx) = axis_tap(uvw[0], dims[0]);
        let (y0, y1, fy) = axis_tap(uvw[1], dims[1]);
        let (z0, z1, fz) = axis_tap(uvw[2], dims[2]);
        let (nx, ny) = (dims[0], dims[1]);
        let at = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
        Self {
            idx: [
                at(x0, y0, z0),
                at(x1, y0, z0),
                at(x0, y1, z0),
                at(x1, y1, z0),
                at(x0, y0, z1),
                at(x1, y0, z1),
                at(x0, y1, z1),
                at(x1, y1, z1),
            ],
            frac: [fx, fy, fz],
        }
    }

    /// Tap weights; they sum to one.
    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [fx, fy, fz] = self.frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        [
            gx * gy * gz,
            fx * gy * gz,
            gx * fy * gz,
            fx * fy * gz,
            gx * gy * fz,
            fx * gy * fz,
            gx * fy * fz,
            fx * fy * fz,
        ]
    }

    /// Interpolates one channel slice.
    #[inline]
    pub fn eval(&self, chan: &[f64]) -> f64 {
        let v = |i: usize| chan[self.idx[i]];
        let [fx, fy, fz] = self.frac;
        let c00 = lerp(v(0), v(1), fx);
        let c10 = lerp(v(2), v(3), fx);
        let c01 = lerp(v(4), v(5), fx);
        let c11 = lerp(v(6), v(7), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

/// Result of a pyramid lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub value: Vec<f64>,
    /// Level of detail after clamping to `[0, L-1]`.
    pub lod_used: f64,
    pub level_pair: (usize, usize),
}

fn check_unit(uvw: [f64; 3]) -> Result<()> {
    if uvw.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::OutsideUnitCube(uvw))
    }
}

/// Samples every channel of `grid` at `uvw`.
pub fn trilinear_sample(grid: &VoxelGrid, uvw: [f64; 3]) -> Result<Vec<f64>> {
    check_unit(uvw)?;
    let st = Stencil::new(grid.dims(), uvw);
    Ok((0..grid.channels()).map(|c| st.eval(grid.channel(c))).collect())
}

/// Clamps `lod` into `[0, levels-1]` and returns `(lod, lower, upper, upper_weight)`.
///
/// Non-finite or negative LODs clamp to level 0. At integer LODs both levels
/// coincide and the upper weight is zero.
#[inline]
pub fn lod_weights(lod: f64, levels: usize) -> (f64, usize, usize, f64) {
    let max = (levels - 1) as f64;
    let l = if lod.is_nan() { 0.0 } else { lod.clamp(0.0, max) };
    let lo = l.floor();
    let hi = l.ceil();
    (l, lo as usize, hi as usize, l - lo)
}

/// Blends trilinear samples from the two levels bracketing `lod`:
/// `(ceil - lod) * f(V_floor) + (lod - floor) * f(V_ceil)`, or the single
/// level's sample when `lod` is an integer.
pub fn quadrilinear_sample(pyr: &MipPyramid, uvw: [f64; 3], lod: f64) -> Result<GridSample> {
    check_unit(uvw)?;
    let (l, lo, hi, w) = lod_weights(lod, pyr.num_levels());
    let mut value = vec![0.0; pyr.channels()];
    sample_levels(pyr, uvw, lo, hi, w, &mut value);
    Ok(GridSample {
        value,
        lod_used: l,
        level_pair: (lo, hi),
    })
}

/// Allocation-free core of [`quadrilinear_sample`]; `uvw` must already be valid.
#[inline]
pub(crate) fn sample_levels(
    pyr: &MipPyramid,
    uvw: [f64; 3],
    lo: usize,
    hi: usize,
    w_hi: f64,
    out: &mut [f64],
) {
    let g_lo = pyr.level(lo);
    let s_lo = Stencil::new(g_lo.dims(), uvw);
    if lo == hi {
        for (c, o) in out.iter_mut().enumerate() {
            *o = s_lo.eval(g_lo.channel(c));
        }
        return;
    }
    let g_hi = pyr.level(hi);
    let s_hi = Stencil::new(g_hi.dims(), uvw);
    for (c, o) in out.iter_mut().enumerate() {
        let a = s_lo.eval(g_lo.channel(c));
        let b = s_hi.eval(g_hi.channel(c));
        *o = lerp(a, b, w_hi);
    }
}

/// Adds `scale * upstream[c] * w_tap` into level `k` of `grad`.
#[inline]
pub(crate) fn scatter(grad: &mut PyramidGrad, k: usize, st: &Stencil, scale: f64, upstream: &[f64]) {
    let w = st.weights();
    let buf = grad.level_mut(k);
    let stride = buf.len() / upstream.len();
    for (c, &u) in upstream.iter().enumerate() {
        let g = scale * u;
        if g == 0.0 {
            continue;
        }
        let chan = &mut buf[c * stride..(c + 1) * stride];
        for t in 0..8 {
            chan[st.idx[t]] += g * w[t];
        }
    }
}

/// Accumulates `d(sample)/d(values)^T * upstream` into `grad`'s per-level
/// buffers. Call [`PyramidGrad::reduce`] to land everything on level 0.
pub fn quadrilinear_backward(
    pyr: &MipPyramid,
    uvw: [f64; 3],
    lod: f64,
    upstream: &[f64],
    grad: &mut PyramidGrad,
) -> Result<()> {
    check_unit(uvw)?;
    if upstream.len() != pyr.channels() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} channels, pyramid has {}",
            upstream.len(),
            pyr.channels()
        )));
    }
    let (_, lo, hi, w) = lod_weights(lod, pyr.num_levels());
    backward_levels(pyr, uvw, lo, hi, w, upstream, grad);
    Ok(())
}

#[inline]
pub(crate) fn backward_levels(
    pyr: &MipPyramid,
    uvw: [f64; 3],
    lo: usize,
    hi: usize,
    w_hi: f64,
    upstream: &[f64],
    grad: &mut PyramidGrad,
) {
    let s_lo = Stencil::new(pyr.level(lo).dims(), uvw);
    if lo == hi {
        scatter(grad, lo, &s_lo, 1.0, upstream);
        return;
    }
    let s_hi = Stencil::new(pyr.level(hi).dims(), uvw);
    scatter(grad, lo, &s_lo, 1.0 - w_hi, upstream);
    scatter(grad, hi, &s_hi, w_hi, upstream);
}
