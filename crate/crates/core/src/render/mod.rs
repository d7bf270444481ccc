//! Deferred volume rendering over density and color mip pyramids.
//!
//! Per sample: `σ = softplus(raw + shift)`, diffuse color and features pass
//! through a sigmoid. Diffuse color and features are alpha-composited along
//! the ray; the deferred MLP then decodes the accumulated features and view
//! direction into a specular residual once per pixel.

mod backward;
mod frame;
mod march;

pub use backward::{composite_backward, render_ray_backward, CompositeGrad, SampleGrad, SceneGrad};
pub use frame::{render_image, render_lod_values, RenderMode};
pub(crate) use frame::{pixels_to_image, trace_pixels};
pub use march::{composite, render_ray, render_ray_forward, sample_ray, PixelResult, RayForward, RenderSample};

use crate::camera::{LodModel, DEFAULT_LOD_DIVISOR};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mlp::DeferredMLP;
use crate::occupancy::OccupancyMask;
use crate::voxel::MipPyramid;

/// Number of diffuse color channels at the front of the color grid.
pub const DIFFUSE_CHANNELS: usize = 3;

/// Transmittance below which inference stops marching.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;

pub const WHITE: [f64; 3] = [1.0; 3];

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Shifted softplus density activation.
#[inline]
pub fn density_activation(raw: f64, shift: f64) -> f64 {
    softplus(raw + shift)
}

/// Shift that makes a zero raw density produce per-step opacity `alpha` at
/// step length `step`: solves `1 - exp(-softplus(shift) * step) = alpha`.
pub fn calibrate_shift(alpha: f64, step: f64) -> f64 {
    let sigma = -(-alpha).ln_1p() / step;
    sigma.exp_m1().ln()
}

/// Per-step opacity `1 - exp(-σ δ)`.
#[inline]
pub fn alpha_from_sigma(sigma: f64, delta: f64) -> f64 {
    -(-sigma * delta).exp_m1()
}

/// Trained (or loaded) scene representation.
#[derive(Debug, Clone)]
pub struct Scene {
    /// One raw density channel.
    pub density: MipPyramid,
    /// Three diffuse channels, optionally followed by four feature channels.
    pub color: MipPyramid,
    pub mlp: Option<DeferredMLP>,
    pub occupancy: Option<OccupancyMask>,
    pub density_shift: f64,
    pub step: f64,
    pub background: [f64; 3],
    pub lod_divisor: f64,
}

impl Scene {
    pub fn new(density: MipPyramid, color: MipPyramid, density_shift: f64) -> Result<Self> {
        if density.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "density grid must have 1 channel, got {}",
                density.channels()
            )));
        }
        let cc = color.channels();
        if cc != DIFFUSE_CHANNELS && cc != DIFFUSE_CHANNELS + crate::mlp::FEATURE_DIM {
            return Err(Error::ShapeMismatch(format!(
                "color grid must have 3 or 7 channels, got {cc}"
            )));
        }
        if density.num_levels() != color.num_levels()
            || density.level0().dims() != color.level0().dims()
            || density.level0().bbox() != color.level0().bbox()
        {
            return Err(Error::ShapeMismatch(
                "density and color pyramids must share dims, bbox and depth".into(),
            ));
        }
        let step = default_step(density.level0().dims(), density.level0().bbox());
        Ok(Self {
            density,
            color,
            mlp: None,
            occupancy: None,
            density_shift,
            step,
            background: WHITE,
            lod_divisor: DEFAULT_LOD_DIVISOR,
        })
    }

    pub fn with_mlp(mut self, mlp: DeferredMLP) -> Self {
        self.mlp = Some(mlp);
        self
    }

    pub fn with_occupancy(mut self, mask: OccupancyMask) -> Self {
        self.occupancy = Some(mask);
        self
    }

    pub fn bbox(&self) -> &Aabb {
        self.density.level0().bbox()
    }

    pub fn has_features(&self) -> bool {
        self.color.channels() > DIFFUSE_CHANNELS
    }

    pub fn num_levels(&self) -> usize {
        self.density.num_levels()
    }

    pub fn lod_model(&self) -> LodModel {
        LodModel::new(self.density.level0().dims(), self.bbox(), self.lod_divisor)
    }

    /// Recomputes derived pyramid levels after level-0 edits.
    pub fn rebuild(&mut self) -> Result<()> {
        self.density.rebuild()?;
        self.color.rebuild()
    }
}

/// Half the smallest level-0 voxel edge.
pub fn default_step(dims: [usize; 3], bbox: &Aabb) -> f64 {
    let e = bbox.extent();
    (0..3).map(|a| e[a] / dims[a] as f64).fold(f64::INFINITY, f64::min) * 0.5
}

/// Knobs that differ between training and inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Sample the mip pyramid at the ray-differential LOD; `false` forces level 0.
    pub use_mip: bool,
    /// Stop marching once transmittance drops below this value.
    pub early_stop: Option<f64>,
    /// First sample sits at `t_near + offset * step`, `offset` in `[0, 1)`.
    pub offset: f64,
}

impl RenderOptions {
    pub fn inference() -> Self {
        Self {
            use_mip: true,
            early_stop: Some(EARLY_STOP_TRANSMITTANCE),
            offset: 0.5,
        }
    }

    /// Exact-gradient settings: no early termination.
    pub fn training(offset: f64) -> Self {
        Self {
            use_mip: true,
            early_stop: None,
            offset,
        }
    }

    pub fn with_mip(mut self, use_mip: bool) -> Self {
        self.use_mip = use_mip;
        self
    }
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self::inference()
    }
}
