//! Reference renderer for baked assets.
//!
//! Mirrors the in-memory renderer (same sample positions, LOD and deferred
//! shading) and composites alphas directly: `w_i = T_i α_i`,
//! `T_{i+1} = T_i (1 - α_i)`.
//!
//! The trained model interpolates raw values and activates afterwards, while
//! the atlases hold activated values. Interpolating activated values moves
//! surfaces by a fraction of a voxel wherever density changes sharply, so
//! each 8-bit code is decoded through a per-level table back to its
//! pre-activation (`logit` for colors and features, inverse softplus of
//! `-ln(1 - α) / step` for density), interpolated there and re-activated.
//! Codes are decoded to their dequantized value kept at least a quarter
//! quantum inside (0, 1), the middle of the half-bin that rounds to them at
//! the domain edge, so saturated codes stay finite.

use super::{BakedAsset, BakedLevel, BLOCK, BORDER, EMPTY, TEXEL_CHANNELS};
use crate::camera::{bbox_intersect, Camera, LodModel, RayBundle};
use crate::error::Result;
use crate::image::Image;
use crate::mlp::{sigmoid, DeferredMLP, FEATURE_DIM};
use crate::render::{alpha_from_sigma, pixels_to_image, softplus, trace_pixels, PixelResult, RenderMode, RenderOptions};
use crate::voxel::lod_weights;

/// `[r, g, b, alpha, f0, f1, f2, f3]`.
type Texel = [f64; 2 * TEXEL_CHANNELS];

const ALPHA: usize = 3;

/// Pre-activation of every 8-bit code, per channel, for one level.
pub struct LevelDecoder {
    lut: [[f64; 256]; 2 * TEXEL_CHANNELS],
}

fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Inverse of `α = 1 - exp(-softplus(x) step)`.
fn alpha_preactivation(alpha: f64, step: f64) -> f64 {
    let sigma = -(-alpha).ln_1p() / step;
    sigma.exp_m1().ln()
}

impl LevelDecoder {
    pub fn new(level: &BakedLevel, step: f64) -> Self {
        let mut lut = [[0.0; 256]; 2 * TEXEL_CHANNELS];
        for (c, table) in lut.iter_mut().enumerate() {
            let (quant, qc) = if c < TEXEL_CHANNELS {
                (&level.quant_a, c)
            } else {
                (&level.quant_b, c - TEXEL_CHANNELS)
            };
            let margin = (0.25 * quant.scale[qc] as f64).max(1e-9);
            for (q, v) in table.iter_mut().enumerate() {
                let y = quant.dequantize(qc, q as u8).clamp(margin, 1.0 - margin);
                *v = if c == ALPHA {
                    alpha_preactivation(y, step)
                } else {
                    logit(y)
                };
            }
        }
        Self { lut }
    }

    /// Decoders for every level of `asset`.
    pub fn for_asset(asset: &BakedAsset) -> Vec<Self> {
        asset.levels.iter().map(|l| Self::new(l, asset.step)).collect()
    }
}

/// Activates an interpolated pre-activation texel.
fn activate(mut t: Texel, step: f64) -> Texel {
    for (c, v) in t.iter_mut().enumerate() {
        *v = if c == ALPHA {
            alpha_from_sigma(softplus(*v), step)
        } else {
            sigmoid(*v)
        };
    }
    t
}

#[inline]
fn axis_tap(u: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let p = (u * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, p - i0 as f64)
}

/// Trilinear pre-activation lookup on one level; `None` when the anchoring
/// block is EMPTY.
fn sample_level(level: &BakedLevel, dec: &LevelDecoder, uvw: [f64; 3]) -> Option<Texel> {
    let mut block = [0usize; 3];
    let mut local = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let (i0, f) = axis_tap(uvw[a], level.dims[a]);
        block[a] = i0 / BLOCK;
        local[a] = i0 - block[a] * BLOCK + BORDER;
        frac[a] = f;
    }
    let slot = level.indirection[(block[2] * level.grid[1] + block[1]) * level.grid[0] + block[0]];
    if slot == EMPTY {
        return None;
    }
    let slot = slot as usize;
    let mut out = [0.0; 2 * TEXEL_CHANNELS];
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
            * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
            * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
        if w == 0.0 {
            continue;
        }
        let off = BakedLevel::texel_offset(slot, local[0] + dx, local[1] + dy, local[2] + dz);
        for c in 0..TEXEL_CHANNELS {
            out[c] += w * dec.lut[c][level.atlas_a[off + c] as usize];
            out[TEXEL_CHANNELS + c] += w * dec.lut[TEXEL_CHANNELS + c][level.atlas_b[off + c] as usize];
        }
    }
    Some(out)
}

/// Blends two levels in pre-activation space and activates. An EMPTY level
/// contributes zero alpha and no color.
fn sample_blend(
    asset: &BakedAsset,
    decoders: &[LevelDecoder],
    uvw: [f64; 3],
    lo: usize,
    hi: usize,
    w_hi: f64,
) -> Option<Texel> {
    let a = sample_level(&asset.levels[lo], &decoders[lo], uvw);
    if lo == hi {
        return a.map(|a| activate(a, asset.step));
    }
    let b = sample_level(&asset.levels[hi], &decoders[hi], uvw);
    match (a, b) {
        (Some(a), Some(b)) => {
            let mut out = a;
            for c in 0..out.len() {
                out[c] += w_hi * (b[c] - a[c]);
            }
            Some(activate(out, asset.step))
        }
        (Some(a), None) => {
            let mut a = activate(a, asset.step);
            a[ALPHA] *= 1.0 - w_hi;
            Some(a)
        }
        (None, Some(b)) => {
            let mut b = activate(b, asset.step);
            b[ALPHA] *= w_hi;
            Some(b)
        }
        (None, None) => None,
    }
}

/// Renders one ray against a baked asset.
pub fn baked_render_ray(
    asset: &BakedAsset,
    decoders: &[LevelDecoder],
    mlp: Option<&DeferredMLP>,
    ray: &RayBundle,
    opts: &RenderOptions,
) -> PixelResult {
    let mut diffuse = [0.0; 3];
    let mut features = [0.0; FEATURE_DIM];
    let mut acc = 0.0;
    let mut lod_acc = 0.0;
    let mut trans = 1.0;
    if let Some((t0, t1)) = bbox_intersect(ray, &asset.bbox) {
        let (t0, t1) = (t0.max(ray.t_near), t1.min(ray.t_far));
        let lod_model = LodModel::new(asset.levels[0].dims, &asset.bbox, asset.lod_divisor);
        let levels = asset.levels.len();
        let mut i = 0usize;
        loop {
            let t = t0 + (i as f64 + opts.offset) * asset.step;
            if t >= t1 {
                break;
            }
            i += 1;
            if let Some(stop) = opts.early_stop {
                if trans < stop {
                    break;
                }
            }
            let u = asset.bbox.world_to_unit_unchecked(&ray.at(t));
            let uvw = u.map(|v| v.clamp(0.0, 1.0));
            let lod = if opts.use_mip { lod_model.sample(ray, t).lod } else { 0.0 };
            let (lod, lo, hi, w) = lod_weights(lod, levels);
            let Some(s) = sample_blend(asset, decoders, uvw, lo, hi, w) else {
                continue;
            };
            let alpha = s[ALPHA];
            let wgt = trans * alpha;
            for c in 0..3 {
                diffuse[c] += wgt * s[c];
            }
            for c in 0..FEATURE_DIM {
                features[c] += wgt * s[TEXEL_CHANNELS + c];
            }
            acc += wgt;
            lod_acc += wgt * lod;
            trans *= 1.0 - alpha;
        }
    }
    for c in 0..3 {
        diffuse[c] += trans * asset.background[c];
    }
    let specular = mlp.map_or([0.0; 3], |m| m.forward(&features, &ray.dir));
    let mut color = [0.0; 3];
    for c in 0..3 {
        color[c] = (diffuse[c] + specular[c]).clamp(0.0, 1.0);
    }
    PixelResult {
        diffuse,
        features,
        specular,
        color,
        acc,
        lod_map: lod_acc / acc.max(1e-10),
        t_final: trans,
    }
}

/// Renders every pixel of `cam` from a baked asset.
pub fn baked_render(asset: &BakedAsset, cam: &Camera, mode: RenderMode, opts: &RenderOptions) -> Result<Image> {
    asset.validate()?;
    let mlp = match &asset.mlp {
        Some(p) => Some(DeferredMLP::from_params(p.iter().map(|&v| v as f64).collect())?),
        None => None,
    };
    let decoders = LevelDecoder::for_asset(asset);
    let pixels = trace_pixels(cam, |ray| baked_render_ray(asset, &decoders, mlp.as_ref(), ray, opts))?;
    pixels_to_image(cam, &pixels, mode, asset.num_levels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::{bake, BakeConfig};
    use crate::geometry::{Aabb, Vec3};
    use crate::render::{render_image, Scene};
    use crate::voxel::{FilterSpec, MipPyramid, VoxelGrid};

    fn cam() -> Camera {
        Camera::look_at(Vec3::new(0.0, -3.0, 0.4), Vec3::zeros(), Vec3::z(), 24, 20, 0.8).unwrap()
    }

    fn scene(raw: impl Fn(usize, usize, usize) -> f64) -> Scene {
        let bbox = Aabb::centered(1.0);
        let d = VoxelGrid::from_fn(1, [32; 3], bbox, |_, x, y, z| raw(x, y, z)).unwrap();
        let c = VoxelGrid::from_fn(7, [32; 3], bbox, |c, x, y, z| {
            (0.2 * x as f64 + 0.15 * y as f64 + 0.1 * (c * z) as f64).sin() - 0.3
        })
        .unwrap();
        Scene::new(
            MipPyramid::build(d, FilterSpec::mean(3), 3).unwrap(),
            MipPyramid::build(c, FilterSpec::mean(3), 3).unwrap(),
            0.0,
        )
        .unwrap()
        .with_mlp(crate::mlp::DeferredMLP::init(5, -2.5))
    }

    #[test]
    fn empty_asset_renders_background() {
        let s = scene(|_, _, _| -1e3);
        let a = bake(&s, &BakeConfig::default()).unwrap();
        let img = baked_render(&a, &cam(), RenderMode::DiffuseOnly, &RenderOptions::inference()).unwrap();
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matches_in_memory_renderer() {
        let s = scene(|x, y, z| {
            let d = [x, y, z].map(|v| v as f64 - 15.5);
            // Raw density ramps linearly across a radius-10 shell.
            2.0 * (10.0 - d.iter().map(|v| v * v).sum::<f64>().sqrt())
        });
        let a = bake(&s, &BakeConfig::default()).unwrap();
        for use_mip in [false, true] {
            let opts = RenderOptions::inference().with_mip(use_mip);
            let reference = render_image(&cam(), &s, RenderMode::Color, &opts).unwrap();
            let baked = baked_render(&a, &cam(), RenderMode::Color, &opts).unwrap();
            let mae = crate::metrics::mean_abs_error(&reference, &baked).unwrap();
            let psnr = crate::metrics::psnr(&reference, &baked).unwrap();
            assert!(mae < 2.0 / 255.0 && psnr > 40.0, "mip {use_mip}: mae {mae} psnr {psnr}");
        }
    }

    #[test]
    fn sharp_surface_matches_in_memory_renderer() {
        // Raw density jumps from -4 to +4 across one voxel: alpha changes by
        // two orders of magnitude, so interpolating activated values moves the
        // surface while pre-activation interpolation does not. Both sides stay
        // within the range 8 bits can resolve.
        let s = scene(|x, y, z| {
            let d = [x, y, z].map(|v| v as f64 - 15.5);
            if d.iter().map(|v| v * v).sum::<f64>().sqrt() < 9.3 {
                4.0
            } else {
                -4.0
            }
        });
        let a = bake(&s, &BakeConfig::default()).unwrap();
        let opts = RenderOptions::inference();
        let reference = render_image(&cam(), &s, RenderMode::Color, &opts).unwrap();
        let baked = baked_render(&a, &cam(), RenderMode::Color, &opts).unwrap();
        let mae = crate::metrics::mean_abs_error(&reference, &baked).unwrap();
        let psnr = crate::metrics::psnr(&reference, &baked).unwrap();
        assert!(mae < 2.0 / 255.0 && psnr > 40.0, "mae {mae} psnr {psnr}");
    }

    #[test]
    fn decoder_inverts_activation_inside_range() {
        let s = scene(|x, _, _| x as f64 * 0.25 - 4.0);
        let a = bake(&s, &BakeConfig::default()).unwrap();
        let level = &a.levels[0];
        let dec = LevelDecoder::new(level, a.step);
        for q in [10u8, 128, 240] {
            for c in 0..TEXEL_CHANNELS {
                let y = level.quant_a.dequantize(c, q);
                let mut t = [0.0; 2 * TEXEL_CHANNELS];
                t[c] = dec.lut[c][q as usize];
                assert!((activate(t, a.step)[c] - y).abs() < 1e-9, "channel {c} code {q}");
            }
        }
    }
}
