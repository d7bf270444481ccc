//! On-disk format of a baked asset.
//!
//! ```text
//! manifest.json        metadata, quantization, MLP (base64 f32 LE), checksums
//! indirection_k.bin    u32 LE per macroblock of level k
//! atlas_k_A.bin        u8 texels of atlas A, level k
//! atlas_k_B.bin        u8 texels of atlas B, level k
//! ```

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{block_grid, BakedAsset, BakedLevel, Quantization, BLOCK, BLOCK_BYTES, BORDER, EMPTY, TEXEL_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mlp::PARAM_COUNT;

pub const MANIFEST_FORMAT: &str = "mipvog-baked";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// A binary file referenced by the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub bytes: u64,
    /// Lowercase hex SHA-256 of the file contents.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub dims: [usize; 3],
    pub grid: [usize; 3],
    pub num_blocks: usize,
    pub quant_a: Quantization,
    pub quant_b: Quantization,
    pub indirection: FileEntry,
    pub atlas_a: FileEntry,
    pub atlas_b: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEntry {
    pub params: usize,
    /// Little-endian f32 parameters, base64.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub block_size: usize,
    pub border: usize,
    pub texel_channels: usize,
    pub empty: u32,
    pub num_levels: usize,
    pub levels: Vec<LevelManifest>,
    pub mlp: Option<MlpEntry>,
    pub bbox: Aabb,
    pub step: f64,
    pub background: [f64; 3],
    pub lod_divisor: f64,
    pub alpha_threshold: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: String, bytes: &[u8]) -> Result<FileEntry> {
    fs::write(dir.join(&name), bytes)?;
    Ok(FileEntry {
        file: name,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    })
}

/// Reads a manifest-listed file, checking its size against both the manifest
/// and the size implied by the level dims.
fn read_file(dir: &Path, entry: &FileEntry, expected: usize) -> Result<Vec<u8>> {
    let bad = |m: String| Error::CorruptAsset(format!("{}: {m}", entry.file));
    if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
        return Err(bad("file names must be plain".into()));
    }
    if entry.bytes != expected as u64 {
        return Err(bad(format!("manifest declares {} bytes, dims imply {expected}", entry.bytes)));
    }
    let bytes = fs::read(dir.join(&entry.file)).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(bad("checksum mismatch".into()));
    }
    Ok(bytes)
}

/// Writes `asset` into `dir` (created if missing) and returns the manifest.
pub fn save_baked(asset: &BakedAsset, dir: impl AsRef<Path>) -> Result<Manifest> {
    asset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut levels = Vec::with_capacity(asset.levels.len());
    for (k, l) in asset.levels.iter().enumerate() {
        let ind: Vec<u8> = l.indirection.iter().flat_map(|v| v.to_le_bytes()).collect();
        levels.push(LevelManifest {
            dims: l.dims,
            grid: l.grid,
            num_blocks: l.num_blocks(),
            quant_a: l.quant_a,
            quant_b: l.quant_b,
            indirection: write_file(dir, format!("indirection_{k}.bin"), &ind)?,
            atlas_a: write_file(dir, format!("atlas_{k}_A.bin"), &l.atlas_a)?,
            atlas_b: write_file(dir, format!("atlas_{k}_B.bin"), &l.atlas_b)?,
        });
    }
    let mlp = asset.mlp.as_ref().map(|p| MlpEntry {
        params: p.len(),
        data: STANDARD.encode(p.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
    });
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        block_size: BLOCK,
        border: BORDER,
        texel_channels: TEXEL_CHANNELS,
        empty: EMPTY,
        num_levels: asset.levels.len(),
        levels,
        mlp,
        bbox: asset.bbox,
        step: asset.step,
        background: asset.background,
        lod_divisor: asset.lod_divisor,
        alpha_threshold: asset.alpha_threshold,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads and verifies an asset written by [`save_baked`].
pub fn load_baked(dir: impl AsRef<Path>) -> Result<BakedAsset> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::CorruptAsset(format!("{MANIFEST_FILE}: {e}")))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::CorruptAsset(format!("{MANIFEST_FILE}: {e}")))?;
    let bad = |msg: String| Err(Error::CorruptAsset(msg));
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return bad(format!("unsupported format {} v{}", m.format, m.version));
    }
    if (m.block_size, m.border, m.texel_channels, m.empty) != (BLOCK, BORDER, TEXEL_CHANNELS, EMPTY) {
        return bad("unsupported block layout".into());
    }
    if m.num_levels != m.levels.len() {
        return bad(format!("num_levels {} but {} level entries", m.num_levels, m.levels.len()));
    }
    let mut levels = Vec::with_capacity(m.levels.len());
    for (k, lm) in m.levels.iter().enumerate() {
        if lm.dims.contains(&0) || lm.grid != block_grid(lm.dims) {
            return bad(format!("level {k}: grid {:?} does not match dims {:?}", lm.grid, lm.dims));
        }
        let slots: usize = lm.grid.iter().product();
        let ind = read_file(dir, &lm.indirection, slots * 4)?;
        let atlas = lm
            .num_blocks
            .checked_mul(BLOCK_BYTES)
            .ok_or_else(|| Error::CorruptAsset(format!("level {k}: block count overflows")))?;
        levels.push(BakedLevel {
            dims: lm.dims,
            grid: lm.grid,
            indirection: ind
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            atlas_a: read_file(dir, &lm.atlas_a, atlas)?,
            atlas_b: read_file(dir, &lm.atlas_b, atlas)?,
            quant_a: lm.quant_a,
            quant_b: lm.quant_b,
        });
    }
    let mlp = match &m.mlp {
        None => None,
        Some(e) => {
            let bytes = STANDARD
                .decode(&e.data)
                .map_err(|err| Error::CorruptAsset(format!("MLP weights: {err}")))?;
            if e.params != PARAM_COUNT || bytes.len() != PARAM_COUNT * 4 {
                return bad(format!("MLP must hold {PARAM_COUNT} f32 parameters"));
            }
            Some(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
    };
    let asset = BakedAsset {
        levels,
        mlp,
        bbox: m.bbox,
        step: m.step,
        background: m.background,
        lod_divisor: m.lod_divisor,
        alpha_threshold: m.alpha_threshold,
    };
    asset.validate()?;
    Ok(asset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::{bake, BakeConfig};
    use crate::render::Scene;
    use crate::voxel::{FilterSpec, MipPyramid, VoxelGrid};

    fn asset() -> BakedAsset {
        let bbox = Aabb::centered(1.0);
        let d = VoxelGrid::from_fn(1, [20, 24, 16], bbox, |_, x, y, _| {
            if x + y < 14 { 3.0 } else { -50.0 }
        })
        .unwrap();
        let c = VoxelGrid::from_fn(7, [20, 24, 16], bbox, |c, x, y, z| ((c + x * y + z) % 7) as f64 - 3.0).unwrap();
        let scene = Scene::new(
            MipPyramid::build(d, FilterSpec::mean(3), 2).unwrap(),
            MipPyramid::build(c, FilterSpec::mean(3), 2).unwrap(),
            0.5,
        )
        .unwrap()
        .with_mlp(crate::mlp::DeferredMLP::init(3, -2.0));
        bake(&scene, &BakeConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let a = asset();
        assert!(a.total_blocks() > 0);
        let dir = tempfile::tempdir().unwrap();
        let m = save_baked(&a, dir.path()).unwrap();
        assert_eq!(m.levels[0].grid, [2, 2, 1]);
        let b = load_baked(dir.path()).unwrap();
        assert_eq!(a, b);
        let dir2 = tempfile::tempdir().unwrap();
        save_baked(&b, dir2.path()).unwrap();
        for e in fs::read_dir(dir.path()).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(dir2.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn truncated_atlas_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_baked(&asset(), dir.path()).unwrap();
        let p = dir.path().join("atlas_0_A.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_baked(dir.path()), Err(Error::CorruptAsset(_))));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_baked(&asset(), dir.path()).unwrap();
        let p = dir.path().join("atlas_0_B.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[7] ^= 1;
        fs::write(&p, bytes).unwrap();
        let err = load_baked(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn manifest_dims_cross_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_baked(&asset(), dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&mp).unwrap()).unwrap();
        m.levels[0].dims = [40, 24, 16];
        fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_baked(dir.path()), Err(Error::CorruptAsset(_))));

        m.levels[0].dims = [20, 24, 16];
        m.levels[0].num_blocks += 1;
        fs::write(&mp, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_baked(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dims imply"), "{err}");
    }

    #[test]
    fn missing_manifest_is_corrupt_asset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_baked(dir.path()), Err(Error::CorruptAsset(_))));
    }
}
