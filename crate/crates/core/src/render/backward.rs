//! Reverse-mode gradients of the deferred renderer.

use super::{RayForward, RenderSample, Scene, DIFFUSE_CHANNELS};
use crate::error::Result;
use crate::mlp::{sigmoid, FEATURE_DIM, PARAM_COUNT};
use crate::voxel::{backward_levels, PyramidGrad};

/// Upstream gradient for one sample's grid lookups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrad {
    pub uvw: [f64; 3],
    pub level_pair: (usize, usize),
    pub upper_weight: f64,
    /// d loss / d raw density.
    pub density: f64,
    /// d loss / d raw color channels; only the first `color_channels` are used.
    pub color: [f64; DIFFUSE_CHANNELS + FEATURE_DIM],
}

/// Gradient buffers for every trainable parameter of a scene.
#[derive(Debug, Clone)]
pub struct SceneGrad {
    pub density: PyramidGrad,
    pub color: PyramidGrad,
    pub mlp: Vec<f64>,
}

impl SceneGrad {
    pub fn new(scene: &Scene) -> Self {
        Self {
            density: PyramidGrad::new(&scene.density),
            color: PyramidGrad::new(&scene.color),
            mlp: vec![0.0; PARAM_COUNT],
        }
    }

    pub fn zero(&mut self) {
        self.density.zero();
        self.color.zero();
        self.mlp.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Scatters per-sample gradients into the per-level buffers.
    pub fn apply(&mut self, scene: &Scene, grads: &[SampleGrad]) {
        let cc = scene.color.channels();
        for g in grads {
            let (lo, hi) = g.level_pair;
            backward_levels(&scene.density, g.uvw, lo, hi, g.upper_weight, &[g.density], &mut self.density);
            backward_levels(&scene.color, g.uvw, lo, hi, g.upper_weight, &g.color[..cc], &mut self.color);
        }
    }

    /// Lands all pyramid gradients on level 0.
    pub fn reduce(&mut self) -> Result<()> {
        self.density.reduce()?;
        self.color.reduce()?;
        Ok(())
    }
}

/// Backpropagates `d_color = dL/dĈ` through clamp, the deferred MLP,
/// compositing (including transmittance coupling) and the activations.
///
/// MLP parameter gradients are added to `mlp_grad`; the returned per-sample
/// gradients still need [`SceneGrad::apply`] to reach the grids.
pub fn render_ray_backward(
    scene: &Scene,
    fwd: &RayForward,
    d_color: &[f64; 3],
    mlp_grad: &mut [f64],
) -> Vec<SampleGrad> {
    let samples = &fwd.samples;
    if samples.is_empty() {
        return Vec::new();
    }
    let mut g = [0.0; 3];
    for c in 0..3 {
        let x = fwd.pre_clamp[c];
        if x > 0.0 && x < 1.0 {
            g[c] = d_color[c];
        }
    }
    let mut g_feat = [0.0; FEATURE_DIM];
    if let (Some(mlp), Some(cache)) = (&scene.mlp, &fwd.mlp_cache) {
        g_feat = mlp.backward(cache, &g, mlp_grad);
    }
    let with_features = scene.has_features();
    let comp = composite_backward(samples, scene.background, &g, &g_feat);
    samples
        .iter()
        .zip(comp)
        .map(|(s, d)| {
            let mut color = [0.0; DIFFUSE_CHANNELS + FEATURE_DIM];
            for c in 0..3 {
                let v = s.c_d[c];
                color[c] = d.c_d[c] * v * (1.0 - v);
            }
            if with_features {
                for c in 0..FEATURE_DIM {
                    let v = s.f_s[c];
                    color[DIFFUSE_CHANNELS + c] = d.f_s[c] * v * (1.0 - v);
                }
            }
            SampleGrad {
                uvw: s.uvw,
                level_pair: s.level_pair,
                upper_weight: s.upper_weight,
                density: d.sigma * sigmoid(s.density_preact),
                color,
            }
        })
        .collect()
}

/// Gradient of a composited pixel with respect to one sample's activated
/// density, diffuse color and features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeGrad {
    pub sigma: f64,
    pub c_d: [f64; 3],
    pub f_s: [f64; FEATURE_DIM],
}

/// Adjoint of [`composite`](super::composite) with a background: maps
/// `dL/d diffuse` and `dL/d features` to per-sample gradients.
pub fn composite_backward(
    samples: &[RenderSample],
    background: [f64; 3],
    d_diffuse: &[f64; 3],
    d_features: &[f64; FEATURE_DIM],
) -> Vec<CompositeGrad> {
    // Per-sample weights and dL/dw_i.
    let n = samples.len();
    let mut w = Vec::with_capacity(n);
    let mut t_next = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut optical_depth = 0.0_f64;
    for s in samples {
        let t = (-optical_depth).exp();
        optical_depth += s.sigma * s.delta;
        w.push(t * super::alpha_from_sigma(s.sigma, s.delta));
        t_next.push((-optical_depth).exp());
        let mut ei = 0.0;
        for c in 0..3 {
            ei += d_diffuse[c] * (s.c_d[c] - background[c]);
        }
        for c in 0..FEATURE_DIM {
            ei += d_features[c] * s.f_s[c];
        }
        e.push(ei);
    }
    let mut out = vec![
        CompositeGrad {
            sigma: 0.0,
            c_d: [0.0; 3],
            f_s: [0.0; FEATURE_DIM],
        };
        n
    ];
    // Suffix sum of e_i w_i for i > k.
    let mut tail = 0.0;
    for k in (0..n).rev() {
        // dL/d(σ_k δ_k) = e_k T_{k+1} - Σ_{i>k} e_i w_i
        out[k].sigma = (e[k] * t_next[k] - tail) * samples[k].delta;
        tail += e[k] * w[k];
        out[k].c_d = d_diffuse.map(|g| w[k] * g);
        out[k].f_s = d_features.map(|g| w[k] * g);
    }
    out
}
