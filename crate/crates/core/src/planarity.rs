//! Planar / non-planar classification of correspondences from the PCA of the
//! target point's map neighborhood.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::local_map::VoxelGrid;

/// Eigen-decomposition of a symmetric 3×3 matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl EigenTriple {
    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    pub fn smallest(&self) -> f64 {
        self.values[2]
    }
}

/// Population covariance (divides by N) about the centroid.
pub fn covariance_of(points: &[Vec3]) -> Mat3 {
    if points.is_empty() {
        return Mat3::zeros();
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / n
}

/// Symmetric eigen-solve. Values in `[-1e-12, 0)` are clamped to zero.
pub fn eigen3_sym(m: &Mat3) -> EigenTriple {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| {
        let v = eig.eigenvalues[i];
        if (-1e-12..0.0).contains(&v) {
            0.0
        } else {
            v
        }
    });
    let vectors = order.map(|i| eig.eigenvectors.column(i).normalize());
    EigenTriple { values, vectors }
}

/// Local surface variation `λ3 / (λ1 + λ2 + λ3)`.
pub fn surface_variation(e: &EigenTriple) -> Result<f64> {
    let trace: f64 = e.values.iter().sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateNeighborhood);
    }
    Ok((e.smallest() / trace).clamp(0.0, 1.0 / 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Minimum neighbor count for a plane fit.
    pub tau_num: usize,
    /// Surface-variation threshold; below it the neighborhood is planar.
    pub tau_planar: f64,
    pub neighbor_radius: f64,
    pub neighbor_max_count: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            tau_num: 5,
            tau_planar: 0.1,
            neighbor_radius: 1.5,
            neighbor_max_count: 20,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_num < 3 {
            return Err(Error::Contract(format!("tau_num must be >= 3, got {}", self.tau_num)));
        }
        if !(self.tau_planar > 0.0 && self.tau_planar <= 1.0 / 3.0) {
            return Err(Error::Contract(format!(
                "tau_planar must lie in (0, 1/3], got {}",
                self.tau_planar
            )));
        }
        if !(self.neighbor_radius > 0.0) {
            return Err(Error::Contract("neighbor_radius must be > 0".into()));
        }
        if self.neighbor_max_count < self.tau_num {
            return Err(Error::Contract(
                "neighbor_max_count must be >= tau_num".into(),
            ));
        }
        Ok(())
    }
}

/// Source point (already in the map frame) matched to a map point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: Vec3,
    pub target: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Planarity {
    Planar { normal: Vec3 },
    NonPlanar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedCorrespondence {
    pub pair: Correspondence,
    pub class: Planarity,
}

impl ClassifiedCorrespondence {
    pub fn is_planar(&self) -> bool {
        matches!(self.class, Planarity::Planar { .. })
    }
}

/// PCA plane fit of a target neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// Unit normal. Oriented toward the sensor by [`fit_neighborhood`].
    pub normal: Vec3,
    pub variation: f64,
    pub neighbors: usize,
}

impl PlaneFit {
    /// Flips the normal so it points from `target` toward `sensor_origin`.
    pub fn facing(mut self, target: &Vec3, sensor_origin: &Vec3) -> Self {
        if self.normal.dot(&(sensor_origin - target)) < 0.0 {
            self.normal = -self.normal;
        }
        self
    }

    pub fn planarity(&self, cfg: &ClassifierConfig) -> Planarity {
        if self.variation < cfg.tau_planar {
            Planarity::Planar { normal: self.normal }
        } else {
            Planarity::NonPlanar
        }
    }
}

/// Unoriented plane fit. `None` when fewer than `tau_num` neighbors are found
/// or the neighborhood has zero spread.
pub fn fit_plane(target: &Vec3, map: &VoxelGrid, cfg: &ClassifierConfig) -> Option<PlaneFit> {
    let neighbors = map.radius_neighbors(target, cfg.neighbor_radius, cfg.neighbor_max_count);
    if neighbors.len() < cfg.tau_num {
        return None;
    }
    let eig = eigen3_sym(&covariance_of(&neighbors));
    let variation = surface_variation(&eig).ok()?;
    Some(PlaneFit {
        normal: eig.vectors[2],
        variation,
        neighbors: neighbors.len(),
    })
}

/// Fits a plane to the map neighborhood of `target` with its normal facing the sensor.
pub fn fit_neighborhood(
    target: &Vec3,
    map: &VoxelGrid,
    cfg: &ClassifierConfig,
    sensor_origin: &Vec3,
) -> Option<PlaneFit> {
    fit_plane(target, map, cfg).map(|f| f.facing(target, sensor_origin))
}

/// Planarity test ψ applied to one correspondence.
pub fn classify(
    pair: Correspondence,
    map: &VoxelGrid,
    cfg: &ClassifierConfig,
    sensor_origin: &Vec3,
) -> ClassifiedCorrespondence {
    let class = fit_neighborhood(&pair.target, map, cfg, sensor_origin)
        .map_or(Planarity::NonPlanar, |fit| fit.planarity(cfg));
    ClassifiedCorrespondence { pair, class }
}
