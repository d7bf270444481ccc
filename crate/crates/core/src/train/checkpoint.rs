//! Checkpoint directory layout:
//!
//! ```text
//! header.json     stage, iteration, config, RNG state, scene metadata
//! density.mvog    level-0 density grid snapshot
//! color.mvog      level-0 color grid snapshot
//! mlp.bin         MLP parameters, little-endian f32 (fine stage only)
//! occupancy.bin   one byte per mask cell (when a mask is attached)
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mlp::DeferredMLP;
use crate::occupancy::OccupancyMask;
use crate::render::Scene;
use crate::voxel::{read_snapshot, write_snapshot, FilterSpec, MipPyramid};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl Stage {
    /// RNG stream so both stages draw independent sequences from one seed.
    pub fn stream(self) -> u64 {
        match self {
            Stage::Coarse => 1,
            Stage::Fine => 2,
        }
    }
}

/// Enough to reconstruct the sampler RNG exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte ChaCha key.
    pub key: String,
    pub stream: u64,
    /// Word position as a decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            key: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::InvalidConfig("malformed RNG state".into());
        if self.key.len() != 64 {
            return Err(bad());
        }
        let mut key = [0u8; 32];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.key[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    pub dims: [usize; 3],
    pub bbox: Aabb,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub stage: Stage,
    pub iteration: usize,
    pub config: TrainConfig,
    pub rng: RngState,
    pub bbox: Aabb,
    pub levels: usize,
    pub filter: FilterSpec,
    pub density_shift: f64,
    pub step: f64,
    pub lod_divisor: f64,
    pub background: [f64; 3],
    pub has_mlp: bool,
    pub occupancy: Option<MaskMeta>,
}

impl CheckpointHeader {
    pub fn new(stage: Stage, iteration: usize, config: &TrainConfig, rng: RngState, scene: &Scene) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            stage,
            iteration,
            config: config.clone(),
            rng,
            bbox: *scene.bbox(),
            levels: scene.num_levels(),
            filter: *scene.density.filter(),
            density_shift: scene.density_shift,
            step: scene.step,
            lod_divisor: scene.lod_divisor,
            background: scene.background,
            has_mlp: scene.mlp.is_some(),
            occupancy: scene.occupancy.as_ref().map(|m| MaskMeta {
                dims: m.dims,
                bbox: m.bbox,
                dilation: m.dilation,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub scene: Scene,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let scene = &ckpt.scene;
    write_snapshot(scene.density.level0(), BufWriter::new(File::create(dir.join("density.mvog"))?))?;
    write_snapshot(scene.color.level0(), BufWriter::new(File::create(dir.join("color.mvog"))?))?;
    if let Some(mlp) = &scene.mlp {
        fs::write(dir.join("mlp.bin"), mlp.to_le_bytes())?;
    }
    if let Some(mask) = &scene.occupancy {
        fs::write(dir.join("occupancy.bin"), mask.to_bytes())?;
    }
    fs::write(dir.join("header.json"), serde_json::to_string_pretty(&ckpt.header)?)?;
    Ok(())
}

fn snapshot(path: &Path, bbox: Aabb) -> Result<crate::voxel::VoxelGrid> {
    let file = File::open(path).map_err(|e| Error::BadSnapshot {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let grid = read_snapshot(BufReader::new(file)).map_err(|e| match e {
        Error::BadSnapshot { reason, .. } => Error::BadSnapshot {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })?;
    // The snapshot stores bbox as f32; the header keeps it exactly.
    crate::voxel::VoxelGrid::from_values(grid.channels(), grid.dims(), bbox, grid.into_values())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let header: CheckpointHeader = serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let density = MipPyramid::build(snapshot(&dir.join("density.mvog"), header.bbox)?, header.filter, header.levels)?;
    let color = MipPyramid::build(snapshot(&dir.join("color.mvog"), header.bbox)?, header.filter, header.levels)?;
    let mut scene = Scene::new(density, color, header.density_shift)?;
    scene.step = header.step;
    scene.lod_divisor = header.lod_divisor;
    scene.background = header.background;
    if header.has_mlp {
        scene = scene.with_mlp(DeferredMLP::from_le_bytes(&fs::read(dir.join("mlp.bin"))?)?);
    }
    if let Some(meta) = &header.occupancy {
        let bytes = fs::read(dir.join("occupancy.bin"))?;
        let mut mask = OccupancyMask::from_cells(meta.dims, meta.bbox, bytes.iter().map(|&b| b != 0).collect())?;
        mask.dilation = meta.dilation;
        scene = scene.with_occupancy(mask);
    }
    Ok(Checkpoint { header, scene })
}
