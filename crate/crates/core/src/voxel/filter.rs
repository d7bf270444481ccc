//! Separable low-pass filters applied before each pyramid downsample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VoxelGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    None,
    Mean,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub size: usize,
    /// Only meaningful for [`FilterKind::Gaussian`]; `None` selects `(size - 1) / 4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self::mean(5)
    }
}

impl FilterSpec {
    pub fn none() -> Self {
        Self {
            kind: FilterKind::None,
            size: 1,
            gaussian_sigma: None,
        }
    }

    pub fn mean(size: usize) -> Self {
        Self {
            kind: FilterKind::Mean,
            size,
            gaussian_sigma: None,
        }
    }

    pub fn gaussian(size: usize) -> Self {
        Self {
            kind: FilterKind::Gaussian,
            size,
            gaussian_sigma: None,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.gaussian_sigma
            .unwrap_or((self.size as f64 - 1.0) / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == FilterKind::None {
            return Ok(());
        }
        if self.size.is_multiple_of(2) || self.size == 0 {
            return Err(Error::InvalidFilter(format!(
                "kernel size must be odd, got {}",
                self.size
            )));
        }
        if self.kind == FilterKind::Gaussian && !(self.sigma() > 0.0) {
            return Err(Error::InvalidFilter(format!(
                "gaussian sigma must be positive, got {}",
                self.sigma()
            )));
        }
        Ok(())
    }

    /// Normalized 1-D taps, centered.
    pub fn taps(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let k = self.size;
        let r = (k / 2) as f64;
        let mut w = match self.kind {
            FilterKind::None => return Ok(vec![1.0]),
            FilterKind::Mean => vec![1.0 / k as f64; k],
            FilterKind::Gaussian => {
                let s = self.sigma();
                let raw: Vec<f64> = (0..k)
                    .map(|i| {
                        let d = i as f64 - r;
                        (-d * d / (2.0 * s * s)).exp()
                    })
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            }
        };
        // Center weight absorbs rounding so the taps sum to one exactly
        // under the difference form used in `convolve_line`.
        let c = k / 2;
        let others: f64 = w.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, v)| v).sum();
        w[c] = 1.0 - others;
        Ok(w)
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FilterKind::None => write!(f, "none"),
            FilterKind::Mean => write!(f, "mean{}", self.size),
            FilterKind::Gaussian => write!(f, "gauss{}", self.size),
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    /// Accepts `none`, `meanK`, `gaussK` / `gaussianK`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let spec = if s == "none" {
            Self::none()
        } else if let Some(k) = s.strip_prefix("gaussian").or_else(|| s.strip_prefix("gauss")) {
            Self::gaussian(parse_size(k, &s)?)
        } else if let Some(k) = s.strip_prefix("mean") {
            Self::mean(parse_size(k, &s)?)
        } else {
            return Err(Error::InvalidFilter(format!("unknown filter `{s}`")));
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_size(k: &str, whole: &str) -> Result<usize> {
    k.parse()
        .map_err(|_| Error::InvalidFilter(format!("bad kernel size in `{whole}`")))
}

/// Views one channel as `outer` blocks of `len` rows of `inner` contiguous
/// values, with rows running along `axis`.
pub(super) fn axis_layout(dims: [usize; 3], axis: usize) -> (usize, usize, usize) {
    let inner: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let outer: usize = dims[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Contiguous lines along x, padded by replication.
fn convolve_x(data: &mut [f64], len: usize, taps: &[f64]) {
    let r = taps.len() / 2;
    let mut pad = vec![0.0; len + 2 * r];
    for line in data.chunks_exact_mut(len) {
        pad[r..r + len].copy_from_slice(line);
        for i in 0..r {
            pad[i] = line[0];
            pad[r + len + i] = line[len - 1];
        }
        for o in 0..len {
            let center = pad[o + r];
            let mut acc = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                if t != r {
                    acc += w * (pad[o + t] - center);
                }
            }
            line[o] = center + acc;
        }
    }
}

fn convolve_x_adjoint(data: &mut [f64], len: usize, taps: &[f64]) {
    let r = taps.len() / 2;
    let mut pad = vec![0.0; len + 2 * r];
    for line in data.chunks_exact_mut(len) {
        pad.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in line.iter().enumerate() {
            if g != 0.0 {
                for (t, &w) in taps.iter().enumerate() {
                    pad[o + t] += w * g;
                }
            }
        }
        line.copy_from_slice(&pad[r..r + len]);
        for i in 0..r {
            line[0] += pad[i];
            line[len - 1] += pad[r + len + i];
        }
    }
}

fn convolve_axis(data: &mut [f64], channels: usize, dims: [usize; 3], axis: usize, taps: &[f64]) {
    let r = taps.len() / 2;
    let (outer, len, inner) = axis_layout(dims, axis);
    if inner == 1 {
        return convolve_x(&mut data[..channels * outer * len], len, taps);
    }
    let mut block = vec![0.0; len * inner];
    let mut acc = vec![0.0; inner];
    for blk in data.chunks_exact_mut(len * inner).take(channels * outer) {
        block.copy_from_slice(blk);
        for o in 0..len {
            let center = &block[o * inner..(o + 1) * inner];
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (t, &w) in taps.iter().enumerate() {
                if t == r {
                    continue;
                }
                let src = (o + t).saturating_sub(r).min(len - 1);
                let row = &block[src * inner..(src + 1) * inner];
                for i in 0..inner {
                    acc[i] += w * (row[i] - center[i]);
                }
            }
            let dst = &mut blk[o * inner..(o + 1) * inner];
            for i in 0..inner {
                dst[i] = center[i] + acc[i];
            }
        }
    }
}

fn convolve_axis_adjoint(data: &mut [f64], channels: usize, dims: [usize; 3], axis: usize, taps: &[f64]) {
    let r = taps.len() / 2;
    let (outer, len, inner) = axis_layout(dims, axis);
    if inner == 1 {
        return convolve_x_adjoint(&mut data[..channels * outer * len], len, taps);
    }
    let mut block = vec![0.0; len * inner];
    for blk in data.chunks_exact_mut(len * inner).take(channels * outer) {
        block.copy_from_slice(blk);
        blk.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..len {
            let g = &block[o * inner..(o + 1) * inner];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (t, &w) in taps.iter().enumerate() {
                let src = (o + t).saturating_sub(r).min(len - 1);
                let dst = &mut blk[src * inner..(src + 1) * inner];
                for i in 0..inner {
                    dst[i] += w * g[i];
                }
            }
        }
    }
}

/// Separable per-channel convolution with clamp-to-edge padding.
pub fn low_pass(grid: &VoxelGrid, filter: &FilterSpec) -> Result<VoxelGrid> {
    let taps = filter.taps()?;
    let mut out = grid.clone();
    if filter.kind == FilterKind::None {
        return Ok(out);
    }
    let (channels, dims) = (grid.channels(), grid.dims());
    for axis in 0..3 {
        convolve_axis(out.values_mut(), channels, dims, axis, &taps);
    }
    Ok(out)
}

/// Adjoint of [`low_pass`] applied in place to a gradient buffer shaped like
/// a grid with `channels` x `dims`.
pub fn low_pass_adjoint(
    grad: &mut [f64],
    channels: usize,
    dims: [usize; 3],
    filter: &FilterSpec,
) -> Result<()> {
    let taps = filter.taps()?;
    if filter.kind == FilterKind::None {
        return Ok(());
    }
    for axis in (0..3).rev() {
        convolve_axis_adjoint(grad, channels, dims, axis, &taps);
    }
    Ok(())
}

/// One output sample of a fused filter-and-halve pass: the pair it averages
/// and the combined taps over clamped source indices.
struct HalveStencil {
    pair: (usize, usize),
    terms: Vec<(usize, f64)>,
}

/// Stencils for low-passing a line of `len` samples with `taps` and then
/// averaging sample pairs (the last sample is replicated on odd lengths).
fn halve_stencils(len: usize, taps: &[f64]) -> Vec<HalveStencil> {
    let r = taps.len() / 2;
    let clamp = |i: isize| i.clamp(0, len as isize - 1) as usize;
    (0..len.div_ceil(2))
        .map(|j| {
            let a = 2 * j;
            let b = (a + 1).min(len - 1);
            let mut terms = Vec::with_capacity(2 * taps.len());
            for (src, scale) in [(a, 0.5), (b, 0.5)] {
                for (t, &w) in taps.iter().enumerate() {
                    terms.push((clamp(src as isize + t as isize - r as isize), scale * w));
                }
            }
            terms.sort_by_key(|&(i, _)| i);
            terms.dedup_by(|next, prev| {
                let same = next.0 == prev.0;
                if same {
                    prev.1 += next.1;
                }
                same
            });
            HalveStencil { pair: (a, b), terms }
        })
        .collect()
}

/// Filters along `axis` and halves it in one pass.
///
/// Evaluated relative to the pair mean so constants pass through exactly.
fn filter_halve_axis(src: &[f64], channels: usize, dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = axis_layout(dims, axis);
    let stencils = halve_stencils(len, taps);
    let half = stencils.len();
    let mut out = vec![0.0; channels * outer * half * inner];
    let blocks = src.chunks_exact(len * inner).zip(out.chunks_exact_mut(half * inner));
    if inner == 1 {
        for (line, dst) in blocks {
            for (o, s) in dst.iter_mut().zip(&stencils) {
                let m = 0.5 * (line[s.pair.0] + line[s.pair.1]);
                let mut acc = 0.0;
                for &(i, c) in &s.terms {
                    acc += c * (line[i] - m);
                }
                *o = m + acc;
            }
        }
        return out;
    }
    let mut acc = vec![0.0; inner];
    for (blk, dst) in blocks {
        for (j, s) in stencils.iter().enumerate() {
            let a = &blk[s.pair.0 * inner..(s.pair.0 + 1) * inner];
            let b = &blk[s.pair.1 * inner..(s.pair.1 + 1) * inner];
            let row = &mut dst[j * inner..(j + 1) * inner];
            for i in 0..inner {
                row[i] = 0.5 * (a[i] + b[i]);
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            for &(k, c) in &s.terms {
                let x = &blk[k * inner..(k + 1) * inner];
                for i in 0..inner {
                    acc[i] += c * (x[i] - row[i]);
                }
            }
            for i in 0..inner {
                row[i] += acc[i];
            }
        }
    }
    out
}

fn filter_halve_axis_adjoint(grad_out: &[f64], channels: usize, dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = axis_layout(dims, axis);
    let stencils = halve_stencils(len, taps);
    let half = stencils.len();
    let mut grad = vec![0.0; channels * outer * len * inner];
    for (g, dst) in grad_out.chunks_exact(half * inner).zip(grad.chunks_exact_mut(len * inner)) {
        for (j, s) in stencils.iter().enumerate() {
            let gj = &g[j * inner..(j + 1) * inner];
            if gj.iter().all(|&v| v == 0.0) {
                continue;
            }
            for &(k, c) in &s.terms {
                let row = &mut dst[k * inner..(k + 1) * inner];
                for i in 0..inner {
                    row[i] += c * gj[i];
                }
            }
        }
    }
    grad
}

/// `low_pass` followed by halving every axis, fused so that each axis pass
/// only produces the samples that survive decimation. Returns the values of
/// the half-resolution grid.
pub(super) fn low_pass_halve(values: &[f64], channels: usize, dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let mut cur = dims;
    let mut data = filter_halve_axis(values, channels, cur, 0, taps);
    cur[0] = cur[0].div_ceil(2);
    for axis in 1..3 {
        data = filter_halve_axis(&data, channels, cur, axis, taps);
        cur[axis] = cur[axis].div_ceil(2);
    }
    data
}

/// Adjoint of [`low_pass_halve`] for a source grid of `dims`.
pub(super) fn low_pass_halve_adjoint(grad_out: &[f64], channels: usize, dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let shapes = [
        dims,
        [dims[0].div_ceil(2), dims[1], dims[2]],
        [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2]],
    ];
    let mut g = filter_halve_axis_adjoint(grad_out, channels, shapes[2], 2, taps);
    for axis in (0..2).rev() {
        g = filter_halve_axis_adjoint(&g, channels, shapes[axis], axis, taps);
    }
    g
}
