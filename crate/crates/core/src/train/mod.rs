//! Two-stage direct optimization of voxel grids and the deferred MLP.
//!
//! The coarse stage fits a 1-channel density and 3-channel diffuse grid at
//! level 0 only and distills them into an occupancy mask. The fine stage
//! trains fresh density and 7-channel color mip pyramids plus the MLP inside
//! that mask. Both minimize the area-weighted squared color error with Adam.

mod checkpoint;
mod config;
mod sampler;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, RngState, Stage};
pub use config::TrainConfig;
pub use sampler::{area_weight, photometric_loss, RaySampler, TrainRay};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{adam_step, check_finite, AdamState};
use crate::dataset::{Dataset, Frame};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mlp::{DeferredMLP, FEATURE_DIM, PARAM_COUNT};
use crate::occupancy::OccupancyMask;
use crate::render::{
    alpha_from_sigma, calibrate_shift, default_step, density_activation, render_ray_backward, render_ray_forward,
    RenderOptions, SampleGrad, Scene, SceneGrad, DIFFUSE_CHANNELS,
};
use crate::voxel::{FilterSpec, MipPyramid, VoxelGrid};

/// Rays per parallel work unit. Fixed so gradient summation order does not
/// depend on the thread count.
const CHUNK_RAYS: usize = 32;

/// Fallback scene bounds when neither config nor dataset provide one.
pub const DEFAULT_BBOX_HALF: f64 = 1.5;

pub fn scene_bbox(config: &TrainConfig, dataset: &Dataset) -> Aabb {
    config
        .bbox
        .or(dataset.bbox)
        .unwrap_or_else(|| Aabb::centered(DEFAULT_BBOX_HALF))
}

/// Zero-initialized scene whose density activation yields per-step opacity
/// `alpha_init` everywhere.
pub fn init_scene(
    dims: [usize; 3],
    bbox: Aabb,
    color_channels: usize,
    filter: FilterSpec,
    levels: usize,
    alpha_init: f64,
) -> Result<Scene> {
    let density = MipPyramid::build(VoxelGrid::zeros(1, dims, bbox)?, filter, levels)?;
    let color = MipPyramid::build(VoxelGrid::zeros(color_channels, dims, bbox)?, filter, levels)?;
    let shift = calibrate_shift(alpha_init, default_step(dims, &bbox));
    Scene::new(density, color, shift)
}

/// Per-step opacity of every level-0 density voxel.
pub fn voxel_alphas(scene: &Scene) -> Vec<f64> {
    scene
        .density
        .level0()
        .values()
        .iter()
        .map(|&raw| alpha_from_sigma(density_activation(raw, scene.density_shift), scene.step))
        .collect()
}

/// `{alpha > threshold}` on the coarse grid, dilated by `dilation` cells.
pub fn extract_mask(scene: &Scene, threshold: f64, dilation: usize) -> Result<OccupancyMask> {
    let g = scene.density.level0();
    OccupancyMask::from_threshold(g.dims(), *g.bbox(), &voxel_alphas(scene), threshold, dilation)
}

/// A batch of supervised rays with their marching offsets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rays: Vec<TrainRay>,
    pub offsets: Vec<f64>,
}

/// Loss and gradients of one batch, not yet applied.
struct BatchGrad {
    loss: f64,
    samples: Vec<Vec<SampleGrad>>,
    mlp: Vec<f64>,
}

/// Stateful optimizer for one stage.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub stage: Stage,
    pub scene: Scene,
    pub iteration: usize,
    frames: &'a [Frame],
    sampler: RaySampler,
    rng: ChaCha8Rng,
    grad: SceneGrad,
    adam_density: AdamState,
    adam_color: AdamState,
    adam_mlp: AdamState,
    use_mip: bool,
}

impl<'a> Trainer<'a> {
    /// Coarse stage: level 0 only, diffuse color, no MLP, no mask.
    pub fn coarse(dataset: &'a Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let scene = init_scene(
            config.coarse_dims,
            scene_bbox(config, dataset),
            DIFFUSE_CHANNELS,
            config.filter,
            1,
            config.alpha_init_coarse,
        )?;
        Self::with_scene(dataset, config, Stage::Coarse, scene, false)
    }

    /// Fine stage: fresh pyramids with features and the MLP, restricted to `mask`.
    pub fn fine(dataset: &'a Dataset, config: &TrainConfig, mask: Option<OccupancyMask>) -> Result<Self> {
        config.validate()?;
        let mut scene = init_scene(
            config.fine_dims,
            scene_bbox(config, dataset),
            DIFFUSE_CHANNELS + FEATURE_DIM,
            config.filter,
            config.levels,
            config.alpha_init_fine,
        )?
        .with_mlp(DeferredMLP::init(config.seed ^ 0x6d6c70, config.mlp_output_bias));
        if let Some(m) = mask {
            scene = scene.with_occupancy(m);
        }
        Self::with_scene(dataset, config, Stage::Fine, scene, config.use_mip_train)
    }

    fn with_scene(
        dataset: &'a Dataset,
        config: &TrainConfig,
        stage: Stage,
        mut scene: Scene,
        use_mip: bool,
    ) -> Result<Self> {
        if dataset.train.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        scene.lod_divisor = config.lod_divisor;
        let grad = SceneGrad::new(&scene);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stage.stream());
        Ok(Self {
            adam_density: AdamState::new("density", scene.density.level0().values().len()),
            adam_color: AdamState::new("color", scene.color.level0().values().len()),
            adam_mlp: AdamState::new("mlp", if scene.mlp.is_some() { PARAM_COUNT } else { 0 }),
            sampler: RaySampler::new(&dataset.train, config.area_loss)?,
            frames: &dataset.train,
            config: config.clone(),
            stage,
            scene,
            iteration: 0,
            rng,
            grad,
            use_mip,
        })
    }

    pub fn use_mip(&self) -> bool {
        self.use_mip
    }

    pub fn rng_state(&self) -> RngState {
        RngState::of(&self.rng)
    }

    pub fn sample_batch(&mut self) -> Batch {
        let rays = self.sampler.sample(self.frames, &mut self.rng, self.config.batch_rays);
        let offsets = (0..rays.len()).map(|_| self.rng.random::<f64>()).collect();
        Batch { rays, offsets }
    }

    fn options(&self, offset: f64) -> RenderOptions {
        RenderOptions::training(offset).with_mip(self.use_mip)
    }

    /// Mean weighted loss of `batch` under the current parameters.
    pub fn batch_loss(&self, batch: &Batch) -> f64 {
        let total: f64 = batch
            .rays
            .par_iter()
            .zip(&batch.offsets)
            .map(|(r, &off)| {
                let fwd = render_ray_forward(&self.scene, &r.ray, &self.options(off));
                photometric_loss(&fwd.pixel.color, &r.target, r.ray.scale_weight).0
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total / batch.rays.len() as f64
    }

    fn batch_gradient(&self, batch: &Batch) -> BatchGrad {
        let n = batch.rays.len() as f64;
        let has_mlp = self.scene.mlp.is_some();
        let chunks: Vec<(f64, Vec<SampleGrad>, Vec<f64>)> = batch
            .rays
            .par_chunks(CHUNK_RAYS)
            .zip(batch.offsets.par_chunks(CHUNK_RAYS))
            .map(|(rays, offs)| {
                let mut mlp = vec![0.0; if has_mlp { PARAM_COUNT } else { 0 }];
                let mut samples = Vec::new();
                let mut loss = 0.0;
                for (r, &off) in rays.iter().zip(offs) {
                    let fwd = render_ray_forward(&self.scene, &r.ray, &self.options(off));
                    let (l, g) = photometric_loss(&fwd.pixel.color, &r.target, r.ray.scale_weight);
                    loss += l;
                    let d = g.map(|v| v / n);
                    samples.extend(render_ray_backward(&self.scene, &fwd, &d, &mut mlp));
                }
                (loss, samples, mlp)
            })
            .collect();
        let mut out = BatchGrad {
            loss: 0.0,
            samples: Vec::with_capacity(chunks.len()),
            mlp: vec![0.0; if has_mlp { PARAM_COUNT } else { 0 }],
        };
        for (loss, samples, mlp) in chunks {
            out.loss += loss;
            for (a, b) in out.mlp.iter_mut().zip(&mlp) {
                *a += b;
            }
            out.samples.push(samples);
        }
        out.loss /= n;
        out
    }

    /// Loss of `batch` and its gradients, reduced onto level 0 and left in
    /// [`Trainer::grad`].
    pub fn gradient(&mut self, batch: &Batch) -> Result<f64> {
        let bg = self.batch_gradient(batch);
        if !bg.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss: bg.loss,
            });
        }
        self.grad.zero();
        for s in &bg.samples {
            self.grad.apply(&self.scene, s);
        }
        self.grad.reduce()?;
        self.grad.mlp = bg.mlp;
        check_finite("density", self.grad.density.level0())?;
        check_finite("color", self.grad.color.level0())?;
        check_finite("mlp", &self.grad.mlp)?;
        Ok(bg.loss)
    }

    pub fn grad(&self) -> &SceneGrad {
        &self.grad
    }

    /// Forward, backward, Adam update and pyramid rebuild on `batch`.
    /// Returns the batch loss before the update.
    pub fn step_on(&mut self, batch: &Batch) -> Result<f64> {
        let loss = self.gradient(batch)?;
        let gd = self.grad.density.level0();
        let gc = self.grad.color.level0();
        let decay = self.lr_factor();
        let lr_grid = self.config.lr_grid * decay;
        adam_step(
            self.scene.density.level0_mut().values_mut(),
            gd,
            &mut self.adam_density,
            lr_grid,
        )?;
        adam_step(self.scene.color.level0_mut().values_mut(), gc, &mut self.adam_color, lr_grid)?;
        if let Some(mlp) = self.scene.mlp.as_mut() {
            adam_step(mlp.params_mut(), &self.grad.mlp, &mut self.adam_mlp, self.config.lr_mlp * decay)?;
        }
        self.scene.rebuild()?;
        self.iteration += 1;
        Ok(loss)
    }

    /// Learning-rate multiplier at the current iteration: exponential decay
    /// from 1 to `lr_decay` over the stage's scheduled iterations.
    pub fn lr_factor(&self) -> f64 {
        let total = match self.stage {
            Stage::Coarse => self.config.iters_coarse,
            Stage::Fine => self.config.iters_fine,
        };
        if total == 0 {
            return 1.0;
        }
        let t = (self.iteration as f64 / total as f64).min(1.0);
        self.config.lr_decay.powf(t)
    }

    /// One iteration on a freshly sampled batch.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.sample_batch();
        self.step_on(&batch)
    }

    /// Runs `iters` steps, calling `progress(iteration, loss)` after each.
    pub fn run(&mut self, iters: usize, mut progress: impl FnMut(&Self, f64) -> Result<()>) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(iters);
        for _ in 0..iters {
            let loss = self.step()?;
            losses.push(loss);
            progress(self, loss)?;
        }
        Ok(losses)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader::new(self.stage, self.iteration, &self.config, self.rng_state(), &self.scene),
            scene: self.scene.clone(),
        }
    }
}

/// Output of the coarse stage.
#[derive(Debug, Clone)]
pub struct CoarseResult {
    pub scene: Scene,
    pub mask: OccupancyMask,
    pub losses: Vec<f64>,
}

/// Output of the fine stage.
#[derive(Debug, Clone)]
pub struct FineResult {
    pub scene: Scene,
    pub losses: Vec<f64>,
}

pub fn train_coarse(dataset: &Dataset, config: &TrainConfig) -> Result<CoarseResult> {
    let mut t = Trainer::coarse(dataset, config)?;
    let losses = t.run(config.iters_coarse, |_, _| Ok(()))?;
    let mask = extract_mask(&t.scene, config.mask_threshold, config.mask_dilation)?;
    Ok(CoarseResult {
        scene: t.scene,
        mask,
        losses,
    })
}

pub fn train_fine(dataset: &Dataset, config: &TrainConfig, mask: Option<OccupancyMask>) -> Result<FineResult> {
    let mut t = Trainer::fine(dataset, config, mask)?;
    let losses = t.run(config.iters_fine, |_, _| Ok(()))?;
    Ok(FineResult { scene: t.scene, losses })
}
