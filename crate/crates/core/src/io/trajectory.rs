//! TUM (`t tx ty tz qx qy qz qw`) and KITTI (3×4 row-major) trajectory files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::io::kitti::KITTI_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Tum,
    Kitti,
}

impl TrajectoryFormat {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryFormat::Tum => "TUM",
            TrajectoryFormat::Kitti => "KITTI",
        }
    }

    fn fields(&self) -> usize {
        match self {
            TrajectoryFormat::Tum => 8,
            TrajectoryFormat::Kitti => 12,
        }
    }

    /// Guesses the format from the field count of the first data line.
    pub fn detect(text: &str) -> Option<Self> {
        let line = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'))?;
        match line.split_whitespace().count() {
            8 => Some(TrajectoryFormat::Tum),
            12 => Some(TrajectoryFormat::Kitti),
            _ => None,
        }
    }
}

impl std::str::FromStr for TrajectoryFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(TrajectoryFormat::Tum),
            "kitti" => Ok(TrajectoryFormat::Kitti),
            _ => Err(format!("unknown trajectory format `{s}`")),
        }
    }
}

/// Unit quaternion `(x, y, z, w)` with `w ≥ 0`.
pub fn rotation_to_quaternion(r: &Mat3) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [q.i * s, q.j * s, q.k * s, q.w * s]
}

pub fn quaternion_to_rotation(q: [f64; 4]) -> Option<Mat3> {
    let raw = Quaternion::new(q[3], q[0], q[1], q[2]);
    if !(raw.norm() > 0.0) {
        return None;
    }
    Some(UnitQuaternion::from_quaternion(raw).to_rotation_matrix().into_inner())
}

fn zero_sign(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

pub fn format_trajectory(traj: &[(f64, Pose)], format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (t, pose) in traj {
        let (r, p) = (pose.rotation(), pose.translation());
        let vals: Vec<f64> = match format {
            TrajectoryFormat::Tum => {
                let q = rotation_to_quaternion(r);
                vec![*t, p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
            }
            TrajectoryFormat::Kitti => (0..3)
                .flat_map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], p[i]])
                .collect(),
        };
        let line: Vec<String> = vals.into_iter().map(|v| zero_sign(v).to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// Rotations off SO(3) by more than this are rejected rather than re-projected.
const MAX_ROTATION_DRIFT: f64 = 1e-3;

fn nearest_pose(r: Mat3, t: Vec3) -> Option<Pose> {
    if let Ok(p) = Pose::new(r, t) {
        return Some(p);
    }
    if (r.transpose() * r - Mat3::identity()).amax() > MAX_ROTATION_DRIFT || r.determinant() <= 0.0 {
        return None;
    }
    let fixed = Rotation3::from_matrix_eps(&r, 1e-15, 100, Rotation3::identity()).into_inner();
    Pose::new(fixed, t).ok()
}

/// Parses a trajectory. KITTI lines get timestamps `index / 10 Hz`.
pub fn parse_trajectory(text: &str, format: TrajectoryFormat) -> Result<Vec<(f64, Pose)>> {
    let name = format.name();
    let mut out: Vec<(f64, Pose)> = Vec::new();
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let at = offset as u64;
        offset += raw.len();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(name, at, format!("bad number: {e}")))?;
        if vals.len() != format.fields() {
            return Err(Error::format(
                name,
                at,
                format!("expected {} fields, found {}", format.fields(), vals.len()),
            ));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::format(name, at, "non-finite value"));
        }
        let (t, pose) = match format {
            TrajectoryFormat::Tum => {
                let r = quaternion_to_rotation([vals[4], vals[5], vals[6], vals[7]])
                    .ok_or_else(|| Error::format(name, at, "zero quaternion"))?;
                let pose = Pose::new(r, Vec3::new(vals[1], vals[2], vals[3]))
                    .map_err(|e| Error::format(name, at, e.to_string()))?;
                (vals[0], pose)
            }
            TrajectoryFormat::Kitti => {
                let r = Mat3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
                let pose = nearest_pose(r, Vec3::new(vals[3], vals[7], vals[11]))
                    .ok_or_else(|| Error::format(name, at, "rotation block is not a rotation"))?;
                (out.len() as f64 / KITTI_HZ, pose)
            }
        };
        if let Some((prev, _)) = out.last() {
            if t < *prev {
                return Err(Error::format(name, at, "timestamps decrease"));
            }
        }
        out.push((t, pose));
    }
    Ok(out)
}

pub fn read_trajectory(path: impl AsRef<Path>, format: Option<TrajectoryFormat>) -> Result<Vec<(f64, Pose)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = match format {
        Some(f) => f,
        None => TrajectoryFormat::detect(&text)
            .ok_or_else(|| Error::format("trajectory", 0, "cannot detect TUM or KITTI layout"))?,
    };
    parse_trajectory(&text, format)
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &[(f64, Pose)], format: TrajectoryFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trajectory(traj, format)).map_err(|e| Error::io(path, e))
}

pub fn write_trajectory_tum(path: impl AsRef<Path>, traj: &[(f64, Pose)]) -> Result<()> {
    write_trajectory(path, traj, TrajectoryFormat::Tum)
}

pub fn write_trajectory_kitti(path: impl AsRef<Path>, traj: &[(f64, Pose)]) -> Result<()> {
    write_trajectory(path, traj, TrajectoryFormat::Kitti)
}
