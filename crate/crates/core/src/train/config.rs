use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::voxel::{FilterSpec, MipPyramid};

/// Hyperparameters for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub coarse_dims: [usize; 3],
    pub fine_dims: [usize; 3],
    pub iters_coarse: usize,
    pub iters_fine: usize,
    pub batch_rays: usize,
    pub lr_grid: f64,
    pub lr_mlp: f64,
    /// Final learning-rate multiplier of the exponential decay (1 keeps it constant).
    pub lr_decay: f64,
    pub alpha_init_coarse: f64,
    pub alpha_init_fine: f64,
    pub filter: FilterSpec,
    /// Pyramid depth L.
    pub levels: usize,
    pub use_mip_train: bool,
    pub area_loss: bool,
    pub seed: u64,
    pub lod_divisor: f64,
    /// Scene bounds; falls back to the dataset's, then to `[-1.5, 1.5]^3`.
    pub bbox: Option<Aabb>,
    pub mask_threshold: f64,
    pub mask_dilation: usize,
    /// Output-layer bias of the deferred MLP at initialization.
    pub mlp_output_bias: f64,
    /// Write a checkpoint every this many fine iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small grids and short schedules that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            coarse_dims: [32; 3],
            fine_dims: [64; 3],
            iters_coarse: 300,
            iters_fine: 6000,
            batch_rays: 1024,
            lr_grid: 0.1,
            lr_mlp: 4e-3,
            lr_decay: 0.1,
            alpha_init_coarse: 1e-6,
            alpha_init_fine: 1e-2,
            filter: FilterSpec::default(),
            levels: 4,
            use_mip_train: true,
            area_loss: true,
            seed: 0,
            lod_divisor: crate::camera::DEFAULT_LOD_DIVISOR,
            bbox: None,
            mask_threshold: 1e-3,
            mask_dilation: 1,
            mlp_output_bias: -3.0,
            checkpoint_every: 0,
        }
    }

    /// Full-scale settings: 128^3 coarse, 512^3 fine, 10k/20k iterations,
    /// 8192-ray batches, constant learning rates.
    pub fn paper() -> Self {
        Self {
            coarse_dims: [128; 3],
            fine_dims: [512; 3],
            iters_coarse: 10_000,
            iters_fine: 20_000,
            batch_rays: 8192,
            lr_decay: 1.0,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.coarse_dims.iter().chain(&self.fine_dims).any(|&d| d == 0) {
            return bad("grid dims must be positive".into());
        }
        if self.batch_rays == 0 || self.levels == 0 {
            return bad("batch_rays and levels must be positive".into());
        }
        if !(self.lr_grid > 0.0 && self.lr_mlp > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        for (name, a) in [
            ("alpha_init_coarse", self.alpha_init_coarse),
            ("alpha_init_fine", self.alpha_init_fine),
        ] {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {a}"));
            }
        }
        if !(self.lod_divisor > 0.0) {
            return bad("lod_divisor must be positive".into());
        }
        self.filter.validate()?;
        MipPyramid::level_dims(self.fine_dims, self.levels)?;
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        Ok(())
    }
}
