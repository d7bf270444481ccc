use rand::Rng;

use crate::camera::{generate_ray, RayBundle};
use crate::dataset::Frame;
use crate::error::{Error, Result};

/// Per-ray loss `weight * |pred - target|^2` and its gradient w.r.t. `pred`.
pub fn photometric_loss(pred: &[f64; 3], target: &[f64; 3], weight: f64) -> (f64, [f64; 3]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    for c in 0..3 {
        let d = pred[c] - target[c];
        loss += d * d;
        grad[c] = 2.0 * weight * d;
    }
    (weight * loss, grad)
}

/// Area-loss weight of a ray from a `1/scale` image: the number of
/// full-resolution pixels its footprint covers.
pub fn area_weight(scale: u32, area_loss: bool) -> f64 {
    if area_loss {
        (scale as f64).powi(2)
    } else {
        1.0
    }
}

/// A supervised ray drawn from the training set.
#[derive(Debug, Clone)]
pub struct TrainRay {
    pub ray: RayBundle,
    pub target: [f64; 3],
    pub frame: usize,
}

/// Uniform sampling over the union of all pixels of all frames.
#[derive(Debug, Clone)]
pub struct RaySampler {
    /// Cumulative pixel counts, one past each frame.
    ends: Vec<usize>,
    weights: Vec<f64>,
}

impl RaySampler {
    pub fn new(frames: &[Frame], area_loss: bool) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        let mut total = 0;
        let ends = frames
            .iter()
            .map(|f| {
                total += f.image.pixel_count();
                total
            })
            .collect();
        Ok(Self {
            ends,
            weights: frames.iter().map(|f| area_weight(f.scale, area_loss)).collect(),
        })
    }

    pub fn total_pixels(&self) -> usize {
        *self.ends.last().unwrap()
    }

    pub fn frame_weight(&self, frame: usize) -> f64 {
        self.weights[frame]
    }

    pub fn frame_pixels(&self, frame: usize) -> usize {
        self.ends[frame] - if frame == 0 { 0 } else { self.ends[frame - 1] }
    }

    /// Expected total loss weight one frame receives per sampled ray:
    /// `P(ray from frame) * weight`.
    pub fn expected_frame_weight(&self, frame: usize) -> f64 {
        self.frame_pixels(frame) as f64 / self.total_pixels() as f64 * self.weights[frame]
    }

    /// Maps a global pixel index to `(frame, x, y)`.
    pub fn locate(&self, frames: &[Frame], index: usize) -> (usize, u32, u32) {
        let frame = self.ends.partition_point(|&e| e <= index);
        let local = index - if frame == 0 { 0 } else { self.ends[frame - 1] };
        let w = frames[frame].image.width as usize;
        (frame, (local % w) as u32, (local / w) as u32)
    }

    pub fn sample<R: Rng>(&self, frames: &[Frame], rng: &mut R, n: usize) -> Vec<TrainRay> {
        let total = self.total_pixels();
        (0..n)
            .map(|_| {
                let (frame, x, y) = self.locate(frames, rng.random_range(0..total));
                let f = &frames[frame];
                let mut ray = generate_ray(&f.camera, x, y, None).expect("sampled pixel in bounds");
                ray.scale_weight = self.weights[frame];
                TrainRay {
                    ray,
                    target: f.image.get(x, y),
                    frame,
                }
            })
            .collect()
    }
}
