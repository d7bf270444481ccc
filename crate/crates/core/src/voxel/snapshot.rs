//! Little-endian grid snapshot format.
//!
//! ```text
//! magic   "MVOG"
//! version u32
//! D, Nx, Ny, Nz  u32 x4
//! bbox    f32 x6   (min xyz, max xyz)
//! values  f32 x D*Nx*Ny*Nz, flat layout of `VoxelGrid::index`
//! ```

use std::io::{Read, Write};

use super::VoxelGrid;
use crate::error::{Error, Result};
use crate::geometry::Aabb;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MVOG";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(grid: &VoxelGrid, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 * 5 + 24 + grid.values().len() * 4);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.channels() as u32).to_le_bytes());
    for n in grid.dims() {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    let b = grid.bbox();
    for v in b.min.iter().chain(b.max.iter()) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in grid.values() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::BadSnapshot {
        path: Default::default(),
        reason: reason.into(),
    }
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<VoxelGrid> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 48 {
        return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let channels = u32_at(8) as usize;
    let dims = [u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
    let mut bb = [0.0f64; 6];
    for (i, v) in bb.iter_mut().enumerate() {
        *v = f32_at(24 + 4 * i) as f64;
    }
    let count = channels
        .checked_mul(dims[0])
        .and_then(|v| v.checked_mul(dims[1]))
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| corrupt("dims overflow"))?;
    let body = &bytes[48..];
    if body.len() != count * 4 {
        return Err(corrupt(format!(
            "expected {} value bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let bbox = Aabb::new([bb[0], bb[1], bb[2]], [bb[3], bb[4], bb[5]])?;
    VoxelGrid::from_values(channels, dims, bbox, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let g = VoxelGrid::filled(2, [3, 4, 5], Aabb::centered(1.0), 0.5).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&g, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"MVOG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[24..28].try_into().unwrap()), -1.0);
        assert_eq!(buf.len(), 48 + 2 * 60 * 4);
    }

    #[test]
    fn round_trip_f32_values() {
        let g = VoxelGrid::from_fn(3, [4, 3, 2], Aabb::centered(1.5), |c, x, y, z| {
            (c as f64 - x as f64 * 0.25 + y as f64 * 0.5 - z as f64) as f32 as f64
        })
        .unwrap();
        let mut buf = Vec::new();
        write_snapshot(&g, &mut buf).unwrap();
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_corruption() {
        let g = VoxelGrid::zeros(1, [2, 2, 2], Aabb::unit()).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&g, &mut buf).unwrap();
        assert!(read_snapshot(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot(&bad[..]).is_err());
        let mut bad = buf;
        bad[4] = 9;
        assert!(read_snapshot(&bad[..]).is_err());
    }
}
