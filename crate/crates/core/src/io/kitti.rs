//! KITTI velodyne scans: packed little-endian `f32` records of `x y z intensity`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::pipeline::ScanFrame;

const RECORD: usize = 16;

/// Scan rate used to derive timestamps from frame indices.
pub const KITTI_HZ: f64 = 10.0;

pub fn parse_kitti_bin(bytes: &[u8]) -> Result<Vec<Vec3>> {
    if bytes.len() % RECORD != 0 {
        let offset = (bytes.len() - bytes.len() % RECORD) as u64;
        return Err(Error::format(
            "KITTI bin",
            offset,
            format!("{} trailing bytes do not form a 16-byte record", bytes.len() % RECORD),
        ));
    }
    Ok(bytes
        .chunks_exact(RECORD)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(1), f(2))
        })
        .collect())
}

/// Reads one scan; the timestamp is `frame_index / 10 Hz`. Intensity is discarded.
pub fn read_kitti_bin(path: impl AsRef<Path>, frame_index: usize) -> Result<ScanFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let points = parse_kitti_bin(&bytes)?;
    Ok(ScanFrame::new(points, frame_index as f64 / KITTI_HZ))
}

/// Writes points as `f32` records with zero intensity.
pub fn write_kitti_bin(path: impl AsRef<Path>, points: &[Vec3]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(points.len() * RECORD);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
