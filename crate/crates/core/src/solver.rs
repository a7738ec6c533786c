//! Adaptive-weight blended ICP.
//!
//! Each iteration matches the transformed source against the map, classifies
//! every match as planar or non-planar, and solves
//!
//! ```text
//! A = α Σ J_plᵀ J_pl + (1 − α) Σ J_poᵀ J_po
//! b = α Σ J_plᵀ ē_pl + (1 − α) Σ J_poᵀ ē_po
//! A Δ = −b
//! ```
//!
//! with `α = N_pl / (N_pl + N_po)`. The increment is applied on the left of
//! the current pose with an exact rotation.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::degeneracy::{conditioning, translational_block};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Twist, Vec3};
use crate::local_map::VoxelGrid;
use crate::planarity::{
    fit_plane, ClassifiedCorrespondence, ClassifierConfig, Correspondence, PlaneFit, Planarity,
};
use crate::residuals::{plane_term, point_term, PlaneTerm, PointTerm};

/// Eigenvalues below `PINV_CUTOFF · λ_max` are dropped by the pseudo-inverse backstop.
pub const PINV_CUTOFF: f64 = 1e-9;

/// Fixed reduction chunk; keeps sums independent of the worker count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Adaptive blend driven by the planar fraction.
    #[default]
    Genz,
    /// Every correspondence with a neighborhood fit uses point-to-plane (α = 1).
    ForcePointToPlane,
    /// Every correspondence uses point-to-point (α = 0).
    ForcePointToPoint,
}

impl MetricMode {
    pub const ALL: [MetricMode; 3] = [
        MetricMode::Genz,
        MetricMode::ForcePointToPlane,
        MetricMode::ForcePointToPoint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricMode::Genz => "genz",
            MetricMode::ForcePointToPlane => "force_point_to_plane",
            MetricMode::ForcePointToPoint => "force_point_to_point",
        }
    }
}

impl std::fmt::Display for MetricMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        MetricMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Threshold on `sqrt(|t|² + |r|²)` of the increment.
    pub convergence_eps: f64,
    pub max_corr_distance: f64,
    pub metric_mode: MetricMode,
    /// When false, neighborhood fits from the first iteration are reused for the rest of the scan.
    pub classify_every_iteration: bool,
    #[serde(skip)]
    pub classifier: ClassifierConfig,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_eps: 1e-4,
            max_corr_distance: 1.0,
            metric_mode: MetricMode::Genz,
            classify_every_iteration: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Contract("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::Contract("convergence_eps must be > 0".into()));
        }
        if !(self.max_corr_distance > 0.0) {
            return Err(Error::Contract("max_corr_distance must be > 0".into()));
        }
        self.classifier.validate()
    }
}

/// Normal equations `A Δ = −b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix6<f64>,
    pub b: Vector6<f64>,
}

impl LinearSystem {
    pub fn zeros() -> Self {
        Self {
            a: Matrix6::zeros(),
            b: Vector6::zeros(),
        }
    }
}

impl std::ops::Add for LinearSystem {
    type Output = LinearSystem;

    fn add(self, rhs: LinearSystem) -> LinearSystem {
        LinearSystem {
            a: self.a + rhs.a,
            b: self.b + rhs.b,
        }
    }
}

/// Linearized term for one correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Plane(PlaneTerm),
    Point(PointTerm),
}

impl Term {
    pub fn from_classified(c: &ClassifiedCorrespondence) -> Self {
        let (p, q) = (&c.pair.source, &c.pair.target);
        match c.class {
            Planarity::Planar { normal } => Term::Plane(plane_term(p, q, &normal)),
            Planarity::NonPlanar => Term::Point(point_term(p, q)),
        }
    }
}

/// `α = N_pl / (N_pl + N_po)`.
pub fn compute_alpha(n_planar: usize, n_nonplanar: usize) -> Result<f64> {
    let total = n_planar + n_nonplanar;
    if total == 0 {
        return Err(Error::NoCorrespondences);
    }
    Ok(n_planar as f64 / total as f64)
}

fn accumulate_serial(terms: &[Term], alpha: f64) -> LinearSystem {
    let mut plane = LinearSystem::zeros();
    let mut point = LinearSystem::zeros();
    for t in terms {
        match t {
            Term::Plane(pl) => {
                let j = pl.jacobian.transpose();
                plane.a += j * pl.jacobian;
                plane.b += j * pl.offset;
            }
            Term::Point(po) => {
                let jt = po.jacobian.transpose();
                point.a += jt * po.jacobian;
                point.b += jt * po.offset;
            }
        }
    }
    LinearSystem {
        a: plane.a * alpha + point.a * (1.0 - alpha),
        b: plane.b * alpha + point.b * (1.0 - alpha),
    }
}

/// Blended normal equations over `terms`. Chunks are reduced in input order,
/// so the result does not depend on how many worker threads run.
pub fn accumulate_system(terms: &[Term], alpha: f64) -> Result<LinearSystem> {
    if terms.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let partials: Vec<LinearSystem> = terms
        .par_chunks(CHUNK)
        .map(|chunk| accumulate_serial(chunk, alpha))
        .collect();
    let mut sys = partials.into_iter().fold(LinearSystem::zeros(), |acc, s| acc + s);
    sys.a = 0.5 * (sys.a + sys.a.transpose());
    Ok(sys)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub delta: Twist,
    /// The factorization failed and the truncated pseudo-inverse was used.
    pub backstop: bool,
}

/// Minimizer of `‖A Δ + b‖²`, i.e. `Δ = −A⁻¹ b`, falling back to the
/// minimum-norm least-squares solution when `A` is not positive definite.
pub fn solve(sys: &LinearSystem) -> Result<Solution> {
    if !sys.a.iter().chain(sys.b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("linear system has non-finite entries".into()));
    }
    if let Some(chol) = Cholesky::new(sys.a) {
        let delta = -chol.solve(&sys.b);
        if delta.iter().all(|v| v.is_finite()) {
            return Ok(Solution {
                delta: Twist::from_vector(&delta),
                backstop: false,
            });
        }
    }
    let eig = SymmetricEigen::new(sys.a);
    let max = eig.eigenvalues.max();
    let mut delta = Vector6::zeros();
    if max > 0.0 {
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > PINV_CUTOFF * max {
                let v = eig.eigenvectors.column(i);
                delta -= v * (v.dot(&sys.b) / lambda);
            }
        }
    }
    if !delta.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("pseudo-inverse produced non-finite increment".into()));
    }
    Ok(Solution {
        delta: Twist::from_vector(&delta),
        backstop: true,
    })
}

pub fn solve_system(sys: &LinearSystem) -> Result<Twist> {
    solve(sys).map(|s| s.delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub alpha: f64,
    pub n_planar: usize,
    pub n_nonplanar: usize,
    pub delta_norm: f64,
    /// Of the translational block of this iteration's `A`; infinite when rank deficient.
    pub condition_number: f64,
    /// `Σ ē_pl²` at the start of the iteration (unweighted).
    pub plane_cost: f64,
    /// `Σ |ē_po|²` at the start of the iteration (unweighted).
    pub point_cost: f64,
    pub backstop: bool,
}

impl IterationRecord {
    /// Blended cost `α Σ e_pl² + (1 − α) Σ |e_po|²` at the start of the iteration.
    pub fn blended_cost(&self) -> f64 {
        self.alpha * self.plane_cost + (1.0 - self.alpha) * self.point_cost
    }

    pub fn n_correspondences(&self) -> usize {
        self.n_planar + self.n_nonplanar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

/// Matches each transformed source point and labels it according to the metric mode.
/// Unmatched points and, in forced point-to-plane mode, points without a
/// neighborhood fit are dropped.
/// Plane fits keyed by the exact target point. Valid while the map is unchanged.
type FitCache = FxHashMap<[u64; 3], Option<PlaneFit>>;

fn bits(p: &Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

fn correspondences(
    transformed: &[Vec3],
    map: &VoxelGrid,
    cfg: &IcpConfig,
    sensor: &Vec3,
    cached: Option<&[Option<Planarity>]>,
    fits: &mut FitCache,
) -> Vec<(usize, ClassifiedCorrespondence)> {
    let matched: Vec<(usize, Correspondence)> = transformed
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let target = map.nearest_neighbor(p, cfg.max_corr_distance)?;
            Some((i, Correspondence { source: *p, target }))
        })
        .collect();
    let needs_fit = |i: usize| {
        cfg.metric_mode != MetricMode::ForcePointToPoint && cached.and_then(|c| c[i]).is_none()
    };

    let mut missing: Vec<Vec3> = Vec::new();
    for (i, pair) in &matched {
        if needs_fit(*i) && !fits.contains_key(&bits(&pair.target)) {
            fits.insert(bits(&pair.target), None);
            missing.push(pair.target);
        }
    }
    let fresh: Vec<Option<PlaneFit>> = missing
        .par_iter()
        .map(|t| fit_plane(t, map, &cfg.classifier))
        .collect();
    for (t, fit) in missing.iter().zip(fresh) {
        fits.insert(bits(t), fit);
    }

    matched
        .into_iter()
        .filter_map(|(i, pair)| {
            if let Some(class) = cached.and_then(|c| c[i]) {
                return Some((i, ClassifiedCorrespondence { pair, class }));
            }
            let fit = || fits[&bits(&pair.target)].map(|f| f.facing(&pair.target, sensor));
            let class = match cfg.metric_mode {
                MetricMode::Genz => fit().map_or(Planarity::NonPlanar, |f| f.planarity(&cfg.classifier)),
                MetricMode::ForcePointToPlane => Planarity::Planar { normal: fit()?.normal },
                MetricMode::ForcePointToPoint => Planarity::NonPlanar,
            };
            Some((i, ClassifiedCorrespondence { pair, class }))
        })
        .collect()
}

/// Registers `source` (sensor frame) against `map` starting from `initial`.
///
/// `sensor_origin` is the sensor position in the source frame; each iteration
/// moves it with the current pose estimate before orienting normals.
pub fn register(
    source: &[Vec3],
    map: &VoxelGrid,
    initial: &Pose,
    sensor_origin: &Vec3,
    cfg: &IcpConfig,
) -> Result<Registration> {
    if source.is_empty() {
        return Err(Error::EmptyScan);
    }
    cfg.validate()?;
    let mut pose = *initial;
    let mut iterations = Vec::with_capacity(cfg.max_iterations);
    let mut cache: Option<Vec<Option<Planarity>>> = None;
    let mut converged = false;
    let mut fits = FitCache::default();

    for iteration in 0..cfg.max_iterations {
        let transformed = pose.transform_points(source);
        let sensor = pose.apply(sensor_origin);
        let matches = correspondences(&transformed, map, cfg, &sensor, cache.as_deref(), &mut fits);
        if matches.is_empty() {
            return Err(Error::RegistrationFailed { iteration });
        }
        if !cfg.classify_every_iteration {
            let c = cache.get_or_insert_with(|| vec![None; source.len()]);
            for (i, m) in &matches {
                c[*i].get_or_insert(m.class);
            }
        }

        let n_planar = matches.iter().filter(|(_, c)| c.is_planar()).count();
        let n_nonplanar = matches.len() - n_planar;
        let alpha = match cfg.metric_mode {
            MetricMode::Genz => compute_alpha(n_planar, n_nonplanar)?,
            MetricMode::ForcePointToPlane => 1.0,
            MetricMode::ForcePointToPoint => 0.0,
        };

        let terms: Vec<Term> = matches.iter().map(|(_, c)| Term::from_classified(c)).collect();
        let (plane_cost, point_cost) = terms.iter().fold((0.0, 0.0), |(pl, po), t| match t {
            Term::Plane(t) => (pl + t.offset * t.offset, po),
            Term::Point(t) => (pl, po + t.offset.norm_squared()),
        });
        let sys = accumulate_system(&terms, alpha)?;
        let condition_number = conditioning(&translational_block(&sys))
            .map_err(|e| Error::Numerical(e.to_string()))?
            .condition_number;
        let solution = solve(&sys)?;
        pose = pose.retract(&solution.delta);

        let delta_norm = solution.delta.norm();
        iterations.push(IterationRecord {
            alpha,
            n_planar,
            n_nonplanar,
            delta_norm,
            condition_number,
            plane_cost,
            point_cost,
            backstop: solution.backstop,
        });
        if delta_norm < cfg.convergence_eps {
            converged = true;
            break;
        }
    }
    Ok(Registration {
        pose,
        iterations,
        converged,
    })
}
