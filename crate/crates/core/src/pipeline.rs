//! Scan-to-map odometry: preprocess, predict, register, update the map.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::degeneracy::median;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::local_map::{voxel_downsample, VoxelGrid};
use crate::solver::{register, IcpConfig, IterationRecord};

/// One LiDAR sweep in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub points: Vec<Vec3>,
    pub timestamp: f64,
}

impl ScanFrame {
    pub fn new(points: Vec<Vec3>, timestamp: f64) -> Self {
        Self { points, timestamp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
    /// Minimum distance between points sharing a cell. Unset means
    /// `voxel_size / √max_points_per_voxel`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_point_spacing: Option<f64>,
    /// Insert the range-clipped scan instead of the downsampled one.
    pub insert_raw: bool,
}

impl MapConfig {
    pub fn spacing(&self) -> f64 {
        self.min_point_spacing
            .unwrap_or_else(|| VoxelGrid::uniform_spacing(self.voxel_size, self.max_points_per_voxel))
    }
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            voxel_size: crate::local_map::DEFAULT_MAP_VOXEL_SIZE,
            max_points_per_voxel: crate::local_map::DEFAULT_MAX_POINTS_PER_VOXEL,
            min_point_spacing: None,
            insert_raw: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub min_range: f64,
    pub max_range: f64,
    pub voxel_size: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_range: 0.5,
            max_range: crate::local_map::DEFAULT_MAX_RANGE,
            voxel_size: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OdometryConfig {
    pub icp: IcpConfig,
    pub map: MapConfig,
    pub preprocess: PreprocessConfig,
}

/// Per-scan summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanDiagnostics {
    pub index: usize,
    pub timestamp: f64,
    pub alpha_final: f64,
    pub n_planar: usize,
    pub n_nonplanar: usize,
    pub iterations: usize,
    pub condition_number_median: f64,
    pub n_correspondences: usize,
    pub runtime: f64,
    pub converged: bool,
    /// Registration failed and the constant-velocity prediction was adopted.
    pub registration_failed: bool,
}

/// Drops points outside `[min_range, max_range]` of the sensor, then voxel-downsamples.
pub fn preprocess(scan: &ScanFrame, cfg: &PreprocessConfig) -> Result<Vec<Vec3>> {
    let clipped = clip_range(&scan.points, cfg);
    let out = voxel_downsample(&clipped, cfg.voxel_size);
    if out.is_empty() {
        return Err(Error::EmptyScan);
    }
    Ok(out)
}

fn clip_range(points: &[Vec3], cfg: &PreprocessConfig) -> Vec<Vec3> {
    points
        .iter()
        .filter(|p| {
            let r = p.norm();
            r >= cfg.min_range && r <= cfg.max_range
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone)]
pub struct Odometry {
    cfg: OdometryConfig,
    map: VoxelGrid,
    last_pose: Option<Pose>,
    prev_pose: Option<Pose>,
    trajectory: Vec<(f64, Pose)>,
    diagnostics: Vec<ScanDiagnostics>,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig) -> Result<Self> {
        cfg.icp.validate()?;
        let p = &cfg.preprocess;
        if !(p.voxel_size > 0.0 && p.min_range >= 0.0 && p.max_range > p.min_range) {
            return Err(Error::Contract("invalid preprocessing parameters".into()));
        }
        let map = VoxelGrid::new(cfg.map.voxel_size, cfg.map.max_points_per_voxel)?
            .with_min_point_spacing(cfg.map.spacing())?;
        Ok(Self {
            cfg,
            map,
            last_pose: None,
            prev_pose: None,
            trajectory: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.cfg
    }

    pub fn map(&self) -> &VoxelGrid {
        &self.map
    }

    pub fn trajectory(&self) -> &[(f64, Pose)] {
        &self.trajectory
    }

    pub fn diagnostics(&self) -> &[ScanDiagnostics] {
        &self.diagnostics
    }

    pub fn last_pose(&self) -> Option<&Pose> {
        self.last_pose.as_ref()
    }

    /// Constant-velocity guess for the next scan.
    pub fn predict_initial(&self) -> Pose {
        match (self.prev_pose, self.last_pose) {
            (_, None) => Pose::identity(),
            (None, Some(last)) => last,
            (Some(prev), Some(last)) => last.compose(&prev.inverse().compose(&last)),
        }
    }

    pub fn process_scan(&mut self, scan: &ScanFrame) -> Result<(Pose, ScanDiagnostics)> {
        let start = Instant::now();
        if let Some((t, _)) = self.trajectory.last() {
            if !(scan.timestamp > *t) {
                return Err(Error::Contract(format!(
                    "timestamps must increase strictly ({} after {t})",
                    scan.timestamp
                )));
            }
        }
        let points = preprocess(scan, &self.cfg.preprocess)?;
        let index = self.trajectory.len();

        let (pose, records, converged, failed) = if self.last_pose.is_none() {
            (Pose::identity(), Vec::new(), true, false)
        } else {
            let predicted = self.predict_initial();
            match register(&points, &self.map, &predicted, &Vec3::zeros(), &self.cfg.icp) {
                Ok(reg) => (reg.pose, reg.iterations, reg.converged, false),
                Err(Error::RegistrationFailed { .. } | Error::Numerical(_)) => {
                    (predicted, Vec::new(), false, true)
                }
                Err(e) => return Err(e),
            }
        };

        if self.cfg.map.insert_raw {
            let raw = clip_range(&scan.points, &self.cfg.preprocess);
            self.map.insert_scan(&raw, &pose);
        } else {
            self.map.insert_scan(&points, &pose);
        }
        self.map
            .prune_beyond(pose.translation(), self.cfg.preprocess.max_range);

        // The bootstrap scan is summarized by a single no-solve pass against the fresh map.
        let records = if index == 0 {
            let single = crate::solver::IcpConfig {
                max_iterations: 1,
                convergence_eps: f64::MAX,
                ..self.cfg.icp
            };
            register(&points, &self.map, &pose, &Vec3::zeros(), &single)
                .map(|r| r.iterations)
                .unwrap_or_default()
        } else {
            records
        };

        let diag = summarize(index, scan.timestamp, &records, converged, failed, start);
        self.prev_pose = self.last_pose;
        self.last_pose = Some(pose);
        self.trajectory.push((scan.timestamp, pose));
        self.diagnostics.push(diag);
        Ok((pose, diag))
    }
}

fn summarize(
    index: usize,
    timestamp: f64,
    records: &[IterationRecord],
    converged: bool,
    failed: bool,
    start: Instant,
) -> ScanDiagnostics {
    let last = records.last();
    let conds: Vec<f64> = records.iter().map(|r| r.condition_number).collect();
    ScanDiagnostics {
        index,
        timestamp,
        alpha_final: last.map_or(0.0, |r| r.alpha),
        n_planar: last.map_or(0, |r| r.n_planar),
        n_nonplanar: last.map_or(0, |r| r.n_nonplanar),
        iterations: if index == 0 { 0 } else { records.len() },
        condition_number_median: median(&conds),
        n_correspondences: last.map_or(0, |r| r.n_correspondences()),
        runtime: start.elapsed().as_secs_f64(),
        converged,
        registration_failed: failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_scan() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                let (u, v) = (i as f64 * 0.4 - 6.0, j as f64 * 0.4 - 6.0);
                pts.push(Vec3::new(u, v, -1.5));
                pts.push(Vec3::new(u, 6.0, v * 0.6));
                pts.push(Vec3::new(6.0, u, v * 0.6));
                pts.push(Vec3::new(-6.0, u, v * 0.6 + 0.1 * u.sin()));
            }
        }
        pts
    }

    #[test]
    fn preprocess_clips_and_dedupes() {
        let cfg = PreprocessConfig { min_range: 1.0, max_range: 10.0, voxel_size: 0.5 };
        let far = ScanFrame::new(vec![Vec3::new(20.0, 0.0, 0.0)], 0.0);
        assert!(matches!(preprocess(&far, &cfg), Err(Error::EmptyScan)));

        let pts = vec![Vec3::new(2.1, 0.0, 0.0), Vec3::new(0.0, 3.1, 0.0)];
        assert_eq!(preprocess(&ScanFrame::new(pts.clone(), 0.0), &cfg).unwrap(), pts);

        let mixed = vec![
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(2.1, 0.0, 0.0),
            Vec3::new(2.2, 0.1, 0.1),
            Vec3::new(50.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 5.3),
        ];
        assert_eq!(
            preprocess(&ScanFrame::new(mixed, 0.0), &cfg).unwrap(),
            vec![Vec3::new(2.1, 0.0, 0.0), Vec3::new(0.0, 0.0, 5.3)]
        );
    }

    #[test]
    fn prediction_follows_constant_velocity() {
        let mut odo = Odometry::new(OdometryConfig::default()).unwrap();
        assert_eq!(odo.predict_initial(), Pose::identity());
        let t1 = Pose::from_translation(Vec3::new(0.0, 0.0, 0.0));
        odo.last_pose = Some(t1);
        assert_eq!(odo.predict_initial(), t1);
        odo.prev_pose = Some(t1);
        odo.last_pose = Some(Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)));
        assert_eq!(odo.predict_initial().translation(), &Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn static_sensor_stays_put() {
        let mut odo = Odometry::new(OdometryConfig::default()).unwrap();
        let pts = cube_scan();
        for k in 0..4 {
            let (pose, diag) = odo.process_scan(&ScanFrame::new(pts.clone(), k as f64 * 0.1)).unwrap();
            assert!(pose.translation().norm() < 1e-6, "{:?}", pose.translation());
            assert!((0.0..=1.0).contains(&diag.alpha_final));
            assert_eq!(diag.index, k);
            if k == 0 {
                assert_eq!(pose, Pose::identity());
                assert_eq!(diag.iterations, 0);
                assert!(!odo.map().is_empty());
            }
        }
        assert_eq!(odo.trajectory().len(), 4);
        assert_eq!(odo.diagnostics().len(), 4);
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let mut odo = Odometry::new(OdometryConfig::default()).unwrap();
        let pts = cube_scan();
        odo.process_scan(&ScanFrame::new(pts.clone(), 1.0)).unwrap();
        assert!(matches!(odo.process_scan(&ScanFrame::new(pts, 1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn failed_registration_adopts_prediction() {
        let mut odo = Odometry::new(OdometryConfig::default()).unwrap();
        odo.process_scan(&ScanFrame::new(cube_scan(), 0.0)).unwrap();
        // Nothing within the correspondence gate of the map.
        let far: Vec<Vec3> = cube_scan().iter().map(|p| p * 3.0 + Vec3::new(0.0, 0.0, 40.0)).collect();
        let (pose, diag) = odo.process_scan(&ScanFrame::new(far, 0.1)).unwrap();
        assert!(diag.registration_failed);
        assert_eq!(pose, Pose::identity());
    }
}
