//! Export of a trained scene to a quantized sparse per-level atlas.
//!
//! Every integer pyramid level is cut into 16³ macroblocks. Blocks whose
//! largest per-step alpha over the texels a lookup can reach (core plus the
//! high-side border) stays below a threshold are dropped; the rest are copied
//! into two u8 atlases with a 1-voxel replicate border so trilinear taps never
//! cross a block seam:
//!
//! - atlas A: `sigmoid(diffuse)` rgb plus per-step alpha `1 - exp(-σ step)`
//! - atlas B: `sigmoid(features)` (zeros for scenes without features)
//!
//! Atlas layout is block-major: block `i` occupies bytes
//! `[i * B, (i + 1) * B)` with `B = 18³ * 4`, texels ordered z, y, x and the
//! four channels interleaved. Texel `(lx, ly, lz)` of block `(bx, by, bz)`
//! holds voxel `clamp(16 b + l - 1, 0, dim - 1)` per axis. The indirection grid
//! has one u32 per block, x fastest, holding the atlas index or [`EMPTY`].
//! A lookup at continuous voxel coordinate `p = clamp(u * dim - 0.5, 0, dim - 1)`
//! anchors on the block holding `i0 = min(floor(p), dim - 2)` and reads the
//! 2³ texels at local `i0 - 16 b + 1` and one above; EMPTY blocks yield zero
//! alpha.
//! Values are stored as `q = round((v - offset) / scale)` with a per-level,
//! per-channel scale and offset. Readers decode each code to its
//! pre-activation (see [`LevelDecoder`]), interpolate there and re-activate,
//! which reproduces the trained renderer's raw-value interpolation.

mod io;
mod render;

pub use io::{load_baked, save_baked, FileEntry, LevelManifest, Manifest, MlpEntry, MANIFEST_FILE, MANIFEST_FORMAT, MANIFEST_VERSION};
pub use render::{baked_render, baked_render_ray, LevelDecoder};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mlp::{sigmoid, FEATURE_DIM};
use crate::render::{alpha_from_sigma, density_activation, Scene, DIFFUSE_CHANNELS};

/// Core edge length of a macroblock in voxels.
pub const BLOCK: usize = 16;
/// Replicated voxels on each side of a block.
pub const BORDER: usize = 1;
/// Stored edge length including both borders.
pub const STORED: usize = BLOCK + 2 * BORDER;
/// Channels per atlas texel.
pub const TEXEL_CHANNELS: usize = 4;
/// Bytes per stored block in one atlas.
pub const BLOCK_BYTES: usize = STORED * STORED * STORED * TEXEL_CHANNELS;
/// Indirection value of a dropped block.
pub const EMPTY: u32 = u32::MAX;
pub const DEFAULT_ALPHA_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_MAX_BLOCKS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BakeConfig {
    /// Blocks whose max alpha is below this become [`EMPTY`].
    pub alpha_threshold: f64,
    /// Atlas capacity in blocks, per level.
    pub max_blocks: usize,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            alpha_threshold: DEFAULT_ALPHA_THRESHOLD,
            max_blocks: DEFAULT_MAX_BLOCKS,
        }
    }
}

/// Per-channel affine 8-bit quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub scale: [f32; TEXEL_CHANNELS],
    pub offset: [f32; TEXEL_CHANNELS],
}

impl Quantization {
    pub fn identity() -> Self {
        Self {
            scale: [0.0; TEXEL_CHANNELS],
            offset: [0.0; TEXEL_CHANNELS],
        }
    }

    /// Range-fitting quantization for per-channel `(min, max)` pairs.
    pub fn fit(ranges: &[(f64, f64); TEXEL_CHANNELS]) -> Self {
        let mut q = Self::identity();
        for (c, &(lo, hi)) in ranges.iter().enumerate() {
            if lo <= hi {
                q.offset[c] = lo as f32;
                q.scale[c] = ((hi - lo) / 255.0) as f32;
            }
        }
        q
    }

    #[inline]
    pub fn quantize(&self, c: usize, v: f64) -> u8 {
        let s = self.scale[c] as f64;
        if s <= 0.0 {
            return 0;
        }
        ((v - self.offset[c] as f64) / s).round().clamp(0.0, 255.0) as u8
    }

    #[inline]
    pub fn dequantize(&self, c: usize, q: u8) -> f64 {
        self.offset[c] as f64 + self.scale[c] as f64 * q as f64
    }
}

/// One baked integer level.
#[derive(Debug, Clone, PartialEq)]
pub struct BakedLevel {
    /// Voxel dims of this level.
    pub dims: [usize; 3],
    /// Macroblock grid dims, `ceil(dims / 16)`.
    pub grid: [usize; 3],
    pub indirection: Vec<u32>,
    pub atlas_a: Vec<u8>,
    pub atlas_b: Vec<u8>,
    pub quant_a: Quantization,
    pub quant_b: Quantization,
}

impl BakedLevel {
    pub fn num_blocks(&self) -> usize {
        self.atlas_a.len() / BLOCK_BYTES
    }

    pub fn num_slots(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.num_blocks() as f64 / self.num_slots() as f64
    }

    /// Checks the structural invariants: sizes, in-range and unique indices.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptAsset(m));
        if self.grid != block_grid(self.dims) {
            return bad(format!("block grid {:?} does not match dims {:?}", self.grid, self.dims));
        }
        if self.indirection.len() != self.num_slots() {
            return bad(format!(
                "indirection has {} slots, expected {}",
                self.indirection.len(),
                self.num_slots()
            ));
        }
        if !self.atlas_a.len().is_multiple_of(BLOCK_BYTES) || self.atlas_a.len() != self.atlas_b.len() {
            return bad(format!(
                "atlas sizes {} / {} are not equal multiples of {BLOCK_BYTES}",
                self.atlas_a.len(),
                self.atlas_b.len()
            ));
        }
        let n = self.num_blocks();
        let mut seen = vec![false; n];
        for &slot in &self.indirection {
            if slot == EMPTY {
                continue;
            }
            let i = slot as usize;
            if i >= n {
                return bad(format!("indirection entry {i} exceeds {n} atlas blocks"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return bad(format!("atlas block {i} referenced twice"));
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("atlas contains unreferenced blocks".into());
        }
        Ok(())
    }

    /// Byte offset of texel `(lx, ly, lz)` of atlas block `block`.
    #[inline]
    pub fn texel_offset(block: usize, lx: usize, ly: usize, lz: usize) -> usize {
        block * BLOCK_BYTES + ((lz * STORED + ly) * STORED + lx) * TEXEL_CHANNELS
    }
}

/// A baked scene: per-level atlases, MLP weights and rendering metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BakedAsset {
    pub levels: Vec<BakedLevel>,
    /// Deferred MLP parameters, or `None` for scenes without features.
    pub mlp: Option<Vec<f32>>,
    pub bbox: Aabb,
    pub step: f64,
    pub background: [f64; 3],
    pub lod_divisor: f64,
    pub alpha_threshold: f64,
}

impl BakedAsset {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.levels.iter().map(BakedLevel::num_blocks).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::CorruptAsset("asset has no levels".into()));
        }
        if let Some(m) = &self.mlp {
            if m.len() != crate::mlp::PARAM_COUNT {
                return Err(Error::CorruptAsset(format!(
                    "MLP has {} parameters, expected {}",
                    m.len(),
                    crate::mlp::PARAM_COUNT
                )));
            }
        }
        if !(self.step > 0.0) {
            return Err(Error::CorruptAsset(format!("step must be positive, got {}", self.step)));
        }
        self.bbox.validate().map_err(|e| Error::CorruptAsset(e.to_string()))?;
        self.levels.iter().try_for_each(BakedLevel::validate)
    }
}

/// `ceil(dims / 16)` per axis.
pub fn block_grid(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d.div_ceil(BLOCK))
}

/// Activated values of one level: per-step alpha plus up to seven colors,
/// channel-major like [`crate::voxel::VoxelGrid`].
struct ActivatedLevel {
    dims: [usize; 3],
    alpha: Vec<f64>,
    /// `[r, g, b, f0, f1, f2, f3]` channel planes.
    color: Vec<Vec<f64>>,
}

impl ActivatedLevel {
    fn new(scene: &Scene, k: usize) -> Self {
        let dg = scene.density.level(k);
        let cg = scene.color.level(k);
        let dims = dg.dims();
        let n = dg.voxel_count();
        let mask = scene.occupancy.as_ref();
        let alpha = (0..n)
            .into_par_iter()
            .map(|i| {
                if let Some(m) = mask {
                    let (x, y, z) = (i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1]));
                    if !m.is_occupied(dg.voxel_center_unit(x, y, z)) {
                        return 0.0;
                    }
                }
                alpha_from_sigma(density_activation(dg.values()[i], scene.density_shift), scene.step)
            })
            .collect();
        let color = (0..DIFFUSE_CHANNELS + FEATURE_DIM)
            .map(|c| {
                if c < cg.channels() {
                    cg.channel(c).iter().map(|&v| sigmoid(v)).collect()
                } else {
                    vec![0.0; n]
                }
            })
            .collect();
        Self { dims, alpha, color }
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Global voxel for stored texel `l` of block `b` on `axis`.
    #[inline]
    fn source(&self, b: usize, l: usize, axis: usize) -> usize {
        (b * BLOCK + l).saturating_sub(BORDER).min(self.dims[axis] - 1)
    }

    /// Voxel indices of every stored texel of block `(bx, by, bz)`, z-y-x order.
    fn block_sources(&self, bx: usize, by: usize, bz: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(STORED * STORED * STORED);
        for lz in 0..STORED {
            let z = self.source(bz, lz, 2);
            for ly in 0..STORED {
                let y = self.source(by, ly, 1);
                for lx in 0..STORED {
                    out.push(self.index(self.source(bx, lx, 0), y, z));
                }
            }
        }
        out
    }
}

/// Bakes every integer level of `scene`.
///
/// Voxels whose centers fall in unoccupied cells of the scene's occupancy
/// mask get zero alpha, matching the renderer's empty-space skipping.
pub fn bake(scene: &Scene, config: &BakeConfig) -> Result<BakedAsset> {
    if !(config.alpha_threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha threshold must be non-negative, got {}",
            config.alpha_threshold
        )));
    }
    let levels = (0..scene.num_levels())
        .map(|k| bake_level(&ActivatedLevel::new(scene, k), k, config))
        .collect::<Result<Vec<_>>>()?;
    let mlp = match (&scene.mlp, scene.has_features()) {
        (Some(m), true) => Some(m.params().iter().map(|&v| v as f32).collect()),
        _ => None,
    };
    Ok(BakedAsset {
        levels,
        mlp,
        bbox: *scene.bbox(),
        step: scene.step,
        background: scene.background,
        lod_divisor: scene.lod_divisor,
        alpha_threshold: config.alpha_threshold,
    })
}

/// Texels a lookup anchored in this block can touch: the core plus the
/// high-side border (the low tap always lies in the core).
fn reachable(src: &[usize]) -> impl Iterator<Item = usize> + '_ {
    (BORDER..STORED).flat_map(move |lz| {
        (BORDER..STORED).flat_map(move |ly| (BORDER..STORED).map(move |lx| src[(lz * STORED + ly) * STORED + lx]))
    })
}

fn bake_level(act: &ActivatedLevel, level: usize, config: &BakeConfig) -> Result<BakedLevel> {
    let grid = block_grid(act.dims);
    let slots: Vec<[usize; 3]> = (0..grid[2])
        .flat_map(|z| (0..grid[1]).flat_map(move |y| (0..grid[0]).map(move |x| [x, y, z])))
        .collect();
    // Kept blocks with their source voxel lists, in slot order.
    let kept: Vec<Option<Vec<usize>>> = slots
        .par_iter()
        .map(|&[bx, by, bz]| {
            let src = act.block_sources(bx, by, bz);
            let max_alpha = reachable(&src).map(|i| act.alpha[i]).fold(0.0, f64::max);
            (max_alpha >= config.alpha_threshold && max_alpha > 0.0).then_some(src)
        })
        .collect();
    let required = kept.iter().flatten().count();
    if required > config.max_blocks {
        return Err(Error::AtlasOverflow {
            level,
            required,
            capacity: config.max_blocks,
        });
    }

    let mut ranges = [[(f64::INFINITY, f64::NEG_INFINITY); TEXEL_CHANNELS]; 2];
    let channel = |atlas: usize, c: usize, i: usize| -> f64 {
        match (atlas, c) {
            (0, 3) => act.alpha[i],
            (0, c) => act.color[c][i],
            (_, c) => act.color[DIFFUSE_CHANNELS + c][i],
        }
    };
    for src in kept.iter().flatten() {
        for atlas in 0..2 {
            for c in 0..TEXEL_CHANNELS {
                let r = &mut ranges[atlas][c];
                for &i in src {
                    let v = channel(atlas, c, i);
                    r.0 = r.0.min(v);
                    r.1 = r.1.max(v);
                }
            }
        }
    }
    let quant = ranges.map(|r| Quantization::fit(&r));

    let mut indirection = vec![EMPTY; slots.len()];
    let mut order = Vec::with_capacity(required);
    for (s, src) in kept.iter().enumerate() {
        if let Some(src) = src {
            indirection[s] = order.len() as u32;
            order.push(src);
        }
    }
    let encode = |atlas: usize| -> Vec<u8> {
        order
            .par_iter()
            .flat_map_iter(|src| {
                src.iter().flat_map(move |&i| {
                    (0..TEXEL_CHANNELS).map(move |c| quant[atlas].quantize(c, channel(atlas, c, i)))
                })
            })
            .collect()
    };
    Ok(BakedLevel {
        dims: act.dims,
        grid,
        indirection,
        atlas_a: encode(0),
        atlas_b: encode(1),
        quant_a: quant[0],
        quant_b: quant[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{FilterSpec, MipPyramid, VoxelGrid};

    fn scene(dims: [usize; 3], levels: usize, raw: impl Fn(usize, usize, usize) -> f64) -> Scene {
        let bbox = Aabb::centered(1.0);
        let d = VoxelGrid::from_fn(1, dims, bbox, |_, x, y, z| raw(x, y, z)).unwrap();
        let c = VoxelGrid::from_fn(7, dims, bbox, |c, x, _, _| 0.1 * c as f64 - 0.2 + 0.01 * x as f64).unwrap();
        Scene::new(
            MipPyramid::build(d, FilterSpec::none(), levels).unwrap(),
            MipPyramid::build(c, FilterSpec::none(), levels).unwrap(),
            0.0,
        )
        .unwrap()
        .with_mlp(crate::mlp::DeferredMLP::init(1, -3.0))
    }

    #[test]
    fn empty_scene_has_no_blocks() {
        let s = scene([32; 3], 2, |_, _, _| -1e3);
        let a = bake(&s, &BakeConfig::default()).unwrap();
        assert_eq!(a.total_blocks(), 0);
        for l in &a.levels {
            assert!(l.indirection.iter().all(|&i| i == EMPTY));
        }
        a.validate().unwrap();
    }

    #[test]
    fn single_block_border_replicates_edges() {
        let s = scene([16; 3], 1, |x, y, z| (x + 2 * y + 3 * z) as f64 * 0.1);
        let a = bake(&s, &BakeConfig::default()).unwrap();
        let l = &a.levels[0];
        assert_eq!((l.grid, l.num_blocks(), l.indirection.clone()), ([1; 3], 1, vec![0]));
        let at = |lx, ly, lz, c| l.atlas_a[BakedLevel::texel_offset(0, lx, ly, lz) + c];
        for a in 0..STORED {
            for b in 0..STORED {
                for c in 0..4 {
                    assert_eq!(at(0, a, b, c), at(1, a, b, c));
                    assert_eq!(at(STORED - 1, a, b, c), at(STORED - 2, a, b, c));
                    assert_eq!(at(a, 0, b, c), at(a, 1, b, c));
                    assert_eq!(at(a, b, STORED - 1, c), at(a, b, STORED - 2, c));
                }
            }
        }
    }

    #[test]
    fn quantization_error_bound() {
        let q = Quantization::fit(&[(0.0, 1.0), (-2.0, 3.0), (0.25, 0.25), (0.1, 0.9)]);
        for c in 0..4 {
            let (lo, hi) = [(0.0, 1.0), (-2.0, 3.0), (0.25, 0.25), (0.1, 0.9)][c];
            for i in 0..=1000 {
                let v = lo + (hi - lo) * i as f64 / 1000.0;
                let err = (q.dequantize(c, q.quantize(c, v)) - v).abs();
                assert!(err <= 0.5 * (hi - lo) / 255.0 + 1e-6, "c {c} v {v} err {err}");
            }
        }
    }

    #[test]
    fn sparse_blocks_and_unique_indices() {
        // Only the x < 8 slab is dense: one column of blocks out of two.
        let s = scene([32, 32, 32], 2, |x, _, _| if x < 8 { 5.0 } else { -1e3 });
        let a = bake(&s, &BakeConfig::default()).unwrap();
        a.validate().unwrap();
        let l0 = &a.levels[0];
        assert_eq!(l0.grid, [2, 2, 2]);
        assert_eq!(l0.num_blocks(), 4);
        for (slot, &i) in l0.indirection.iter().enumerate() {
            assert_eq!(i != EMPTY, slot % 2 == 0);
        }
        assert_eq!(a.levels[1].dims, [16; 3]);
    }

    #[test]
    fn overflow_reports_required_size() {
        let s = scene([32; 3], 1, |_, _, _| 5.0);
        let err = bake(&s, &BakeConfig { max_blocks: 3, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::AtlasOverflow { level: 0, required: 8, capacity: 3 }), "{err}");
    }

    #[test]
    fn masked_voxels_are_dropped() {
        let mut s = scene([32; 3], 1, |_, _, _| 5.0);
        let mut cells = vec![false; 8];
        cells[0] = true;
        s.occupancy = Some(crate::occupancy::OccupancyMask::from_cells([2; 3], *s.bbox(), cells).unwrap());
        let a = bake(&s, &BakeConfig::default()).unwrap();
        assert_eq!(a.levels[0].num_blocks(), 1);
    }
}
