use super::{alpha_from_sigma, density_activation, RenderOptions, Scene, DIFFUSE_CHANNELS};
use crate::camera::{bbox_intersect, RayBundle};
use crate::mlp::{sigmoid, MlpCache, FEATURE_DIM};
use crate::voxel::{lod_weights, sample_levels};

/// One kept point along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSample {
    pub t: f64,
    /// Distance to the next sample.
    pub delta: f64,
    /// Activated density.
    pub sigma: f64,
    pub alpha: f64,
    /// Transmittance before this sample.
    pub transmittance: f64,
    pub c_d: [f64; 3],
    pub f_s: [f64; FEATURE_DIM],
    /// Clamped level of detail used for the lookup.
    pub lod: f64,
    pub uvw: [f64; 3],
    pub level_pair: (usize, usize),
    /// Blend weight of the upper level.
    pub upper_weight: f64,
    /// Density pre-activation `raw + shift`.
    pub density_preact: f64,
}

/// Composited pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelResult {
    /// Composited diffuse color, background included.
    pub diffuse: [f64; 3],
    pub features: [f64; FEATURE_DIM],
    pub specular: [f64; 3],
    /// `clamp(diffuse + specular, 0, 1)`.
    pub color: [f64; 3],
    /// Opacity, the sum of compositing weights.
    pub acc: f64,
    /// Weight-averaged level of detail.
    pub lod_map: f64,
    /// Transmittance left after the last sample.
    pub t_final: f64,
}

/// Marches `ray` through the scene's bbox at the scene's step size.
///
/// Points in empty occupancy cells are skipped. Each kept point looks up both
/// pyramids at its own LOD (or level 0 when `opts.use_mip` is off).
pub fn sample_ray(ray: &RayBundle, scene: &Scene, opts: &RenderOptions) -> Vec<RenderSample> {
    let Some((t0, t1)) = bbox_intersect(ray, scene.bbox()) else {
        return Vec::new();
    };
    let (t0, t1) = (t0.max(ray.t_near), t1.min(ray.t_far));
    let step = scene.step;
    let bbox = scene.bbox();
    let lod_model = scene.lod_model();
    let levels = scene.num_levels();
    let color_ch = scene.color.channels();

    let mut out = Vec::new();
    let mut optical_depth = 0.0_f64;
    let mut raw = [0.0; 1];
    let mut col = [0.0; DIFFUSE_CHANNELS + FEATURE_DIM];
    let mut i = 0usize;
    loop {
        let t = t0 + (i as f64 + opts.offset) * step;
        if t >= t1 {
            break;
        }
        i += 1;
        let p = ray.at(t);
        let u = bbox.world_to_unit_unchecked(&p);
        let uvw = [u[0].clamp(0.0, 1.0), u[1].clamp(0.0, 1.0), u[2].clamp(0.0, 1.0)];
        if let Some(mask) = &scene.occupancy {
            if !mask.is_occupied(uvw) {
                continue;
            }
        }
        let transmittance = (-optical_depth).exp();
        if let Some(stop) = opts.early_stop {
            if transmittance < stop {
                break;
            }
        }
        let lod = if opts.use_mip {
            lod_model.sample(ray, t).lod
        } else {
            0.0
        };
        let (lod, lo, hi, w) = lod_weights(lod, levels);
        sample_levels(&scene.density, uvw, lo, hi, w, &mut raw);
        sample_levels(&scene.color, uvw, lo, hi, w, &mut col[..color_ch]);
        let pre = raw[0] + scene.density_shift;
        let sigma = density_activation(raw[0], scene.density_shift);
        let mut c_d = [0.0; 3];
        for c in 0..3 {
            c_d[c] = sigmoid(col[c]);
        }
        let mut f_s = [0.0; FEATURE_DIM];
        if color_ch > DIFFUSE_CHANNELS {
            for c in 0..FEATURE_DIM {
                f_s[c] = sigmoid(col[DIFFUSE_CHANNELS + c]);
            }
        }
        out.push(RenderSample {
            t,
            delta: step,
            sigma,
            alpha: alpha_from_sigma(sigma, step),
            transmittance,
            c_d,
            f_s,
            lod,
            uvw,
            level_pair: (lo, hi),
            upper_weight: w,
            density_preact: pre,
        });
        optical_depth += sigma * step;
    }
    out
}

/// Alpha-composites diffuse color, features and LOD along the ray.
///
/// `w_i = T_i (1 - exp(-σ_i δ_i))`, `T_i = exp(-Σ_{j<i} σ_j δ_j)`. Samples
/// must be ordered by increasing `t`.
pub fn composite(samples: &[RenderSample], background: Option<[f64; 3]>) -> PixelResult {
    let mut diffuse = [0.0; 3];
    let mut features = [0.0; FEATURE_DIM];
    let mut acc = 0.0;
    let mut lod_acc = 0.0;
    let mut optical_depth = 0.0_f64;
    for s in samples {
        let t = (-optical_depth).exp();
        let w = t * alpha_from_sigma(s.sigma, s.delta);
        for c in 0..3 {
            diffuse[c] += w * s.c_d[c];
        }
        for c in 0..FEATURE_DIM {
            features[c] += w * s.f_s[c];
        }
        acc += w;
        lod_acc += w * s.lod;
        optical_depth += s.sigma * s.delta;
    }
    if let Some(bg) = background {
        for c in 0..3 {
            diffuse[c] += (1.0 - acc) * bg[c];
        }
    }
    PixelResult {
        diffuse,
        features,
        specular: [0.0; 3],
        color: diffuse.map(|v| v.clamp(0.0, 1.0)),
        acc,
        lod_map: lod_acc / acc.max(1e-10),
        t_final: (-optical_depth).exp(),
    }
}

/// Forward pass of one ray with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct RayForward {
    pub ray: RayBundle,
    pub samples: Vec<RenderSample>,
    pub pixel: PixelResult,
    pub mlp_cache: Option<MlpCache>,
    /// `diffuse + specular` before clamping.
    pub pre_clamp: [f64; 3],
}

pub fn render_ray_forward(scene: &Scene, ray: &RayBundle, opts: &RenderOptions) -> RayForward {
    let samples = sample_ray(ray, scene, opts);
    let mut pixel = composite(&samples, Some(scene.background));
    let mut mlp_cache = None;
    if let (Some(mlp), true) = (&scene.mlp, scene.has_features()) {
        let cache = mlp.forward_cached(&pixel.features, &ray.dir);
        pixel.specular = cache.output();
        mlp_cache = Some(cache);
    }
    let mut pre_clamp = [0.0; 3];
    for c in 0..3 {
        pre_clamp[c] = pixel.diffuse[c] + pixel.specular[c];
        pixel.color[c] = pre_clamp[c].clamp(0.0, 1.0);
    }
    RayForward {
        ray: ray.clone(),
        samples,
        pixel,
        mlp_cache,
        pre_clamp,
    }
}

pub fn render_ray(scene: &Scene, ray: &RayBundle, opts: &RenderOptions) -> PixelResult {
    render_ray_forward(scene, ray, opts).pixel
}
