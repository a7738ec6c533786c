//! Python bindings. Points cross the boundary as sequences of `(x, y, z)`;
//! rotations as nested 3x3 lists.

use std::path::PathBuf;

use genz_core::degeneracy;
use genz_core::eval::{self, EvalConfig, ErrorStats};
use genz_core::io::{self, PlyEncoding, TrajectoryFormat};
use genz_core::pipeline::{self, ScanDiagnostics};
use genz_core::solver::{self, IterationRecord};
use genz_core::synth::{self, SceneSpec};
use genz_core::{Error, IcpConfig, Mat3, MetricMode, OdometryConfig, ScanFrame, Vec3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Contract(_) | Error::Format { .. } | Error::EmptyScan => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vecs(points: Vec<[f64; 3]>) -> Vec<Vec3> {
    points.into_iter().map(Vec3::from).collect()
}

fn arrays(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn mat(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn mode(name: &str) -> PyResult<MetricMode> {
    name.parse().map_err(PyValueError::new_err)
}

fn format(name: Option<&str>) -> PyResult<Option<TrajectoryFormat>> {
    name.map(|n| n.parse().map_err(|e: String| PyValueError::new_err(e))).transpose()
}

/// Rigid transform in SE(3).
#[pyclass(module = "genz_icp", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct Pose(genz_core::Pose);

#[pymethods]
impl Pose {
    #[new]
    #[pyo3(signature = (rotation = None, translation = [0.0; 3]))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: [f64; 3]) -> PyResult<Self> {
        let r = rotation.map(mat).unwrap_or_else(Mat3::identity);
        genz_core::Pose::new(r, Vec3::from(translation)).map(Pose).map_err(to_py)
    }

    #[staticmethod]
    fn identity() -> Self {
        Pose(genz_core::Pose::identity())
    }

    /// Rotation by the axis-angle vector `r`, no translation.
    #[staticmethod]
    fn from_axis_angle(r: [f64; 3]) -> Self {
        Pose(genz_core::Pose::from_axis_angle(&Vec3::from(r)))
    }

    /// Exponential of the twist `[t; r]`.
    #[staticmethod]
    fn from_twist(translation: [f64; 3], rotation: [f64; 3]) -> Self {
        Pose(genz_core::Pose::from_twist(&genz_core::Twist::new(Vec3::from(translation), Vec3::from(rotation))))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows(self.0.rotation())
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.0.translation();
        [t.x, t.y, t.z]
    }

    /// Rotation angle in radians.
    #[getter]
    fn angle(&self) -> f64 {
        genz_core::geometry::rotation_angle(self.0.rotation())
    }

    fn compose(&self, other: &Pose) -> Pose {
        Pose(self.0.compose(&other.0))
    }

    fn __matmul__(&self, other: &Pose) -> Pose {
        self.compose(other)
    }

    fn inverse(&self) -> Pose {
        Pose(self.0.inverse())
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        arrays(&self.0.transform_points(&vecs(points)))
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        format!("Pose(translation=({:.6}, {:.6}, {:.6}), angle={:.6})", t[0], t[1], t[2], self.angle())
    }
}

/// Voxel hash map with exact nearest-neighbor and radius queries.
#[pyclass(module = "genz_icp")]
pub struct VoxelGrid(genz_core::VoxelGrid);

#[pymethods]
impl VoxelGrid {
    #[new]
    #[pyo3(signature = (voxel_size = 1.0, max_points_per_voxel = 20, min_point_spacing = 0.0))]
    fn new(voxel_size: f64, max_points_per_voxel: usize, min_point_spacing: f64) -> PyResult<Self> {
        genz_core::VoxelGrid::new(voxel_size, max_points_per_voxel)
            .and_then(|g| g.with_min_point_spacing(min_point_spacing))
            .map(VoxelGrid)
            .map_err(to_py)
    }

    fn insert(&mut self, points: Vec<[f64; 3]>) {
        self.0.insert_points(&vecs(points));
    }

    /// Inserts sensor-frame points after moving them by `pose`.
    fn insert_scan(&mut self, points: Vec<[f64; 3]>, pose: &Pose) {
        self.0.insert_scan(&vecs(points), &pose.0);
    }

    fn nearest_neighbor(&self, query: [f64; 3], max_dist: f64) -> Option<[f64; 3]> {
        self.0.nearest_neighbor(&Vec3::from(query), max_dist).map(|p| [p.x, p.y, p.z])
    }

    fn radius_neighbors(&self, query: [f64; 3], radius: f64, max_count: usize) -> Vec<[f64; 3]> {
        arrays(&self.0.radius_neighbors(&Vec3::from(query), radius, max_count))
    }

    fn points(&self) -> Vec<[f64; 3]> {
        arrays(&self.0.points())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn iteration_dict<'py>(py: Python<'py>, r: &IterationRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha", r.alpha)?;
    d.set_item("n_planar", r.n_planar)?;
    d.set_item("n_nonplanar", r.n_nonplanar)?;
    d.set_item("delta_norm", r.delta_norm)?;
    d.set_item("condition_number", r.condition_number)?;
    d.set_item("plane_cost", r.plane_cost)?;
    d.set_item("point_cost", r.point_cost)?;
    d.set_item("backstop", r.backstop)?;
    Ok(d)
}

fn diagnostics_dict<'py>(py: Python<'py>, s: &ScanDiagnostics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("index", s.index)?;
    d.set_item("timestamp", s.timestamp)?;
    d.set_item("alpha_final", s.alpha_final)?;
    d.set_item("n_planar", s.n_planar)?;
    d.set_item("n_nonplanar", s.n_nonplanar)?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("condition_number_median", s.condition_number_median)?;
    d.set_item("n_correspondences", s.n_correspondences)?;
    d.set_item("runtime", s.runtime)?;
    d.set_item("converged", s.converged)?;
    d.set_item("registration_failed", s.registration_failed)?;
    Ok(d)
}

/// Registers `source` (sensor frame) against `grid`, starting from `initial`.
/// Returns `(pose, converged, iterations)` with one dict per iteration.
#[pyfunction]
#[pyo3(signature = (source, grid, initial, mode = "genz", max_iterations = None, max_corr_distance = None))]
fn register<'py>(
    py: Python<'py>,
    source: Vec<[f64; 3]>,
    grid: &VoxelGrid,
    initial: &Pose,
    mode: &str,
    max_iterations: Option<usize>,
    max_corr_distance: Option<f64>,
) -> PyResult<(Pose, bool, Vec<Bound<'py, PyDict>>)> {
    let defaults = IcpConfig::default();
    let cfg = IcpConfig {
        metric_mode: self::mode(mode)?,
        max_iterations: max_iterations.unwrap_or(defaults.max_iterations),
        max_corr_distance: max_corr_distance.unwrap_or(defaults.max_corr_distance),
        ..defaults
    };
    let reg = solver::register(&vecs(source), &grid.0, &initial.0, &Vec3::zeros(), &cfg).map_err(to_py)?;
    let records = reg.iterations.iter().map(|r| iteration_dict(py, r)).collect::<PyResult<_>>()?;
    Ok((Pose(reg.pose), reg.converged, records))
}

/// Scan-to-map odometry over a stream of scans.
#[pyclass(module = "genz_icp", unsendable)]
pub struct Odometry(pipeline::Odometry);

#[pymethods]
impl Odometry {
    #[new]
    #[pyo3(signature = (mode = "genz", voxel_size = None, max_range = None))]
    fn new(mode: &str, voxel_size: Option<f64>, max_range: Option<f64>) -> PyResult<Self> {
        let mut cfg = OdometryConfig::default();
        cfg.icp.metric_mode = self::mode(mode)?;
        if let Some(v) = voxel_size {
            cfg.map.voxel_size = v;
        }
        if let Some(r) = max_range {
            cfg.preprocess.max_range = r;
        }
        pipeline::Odometry::new(cfg).map(Odometry).map_err(to_py)
    }

    /// Registers one scan; returns `(pose, diagnostics)`.
    fn process_scan<'py>(
        &mut self,
        py: Python<'py>,
        points: Vec<[f64; 3]>,
        timestamp: f64,
    ) -> PyResult<(Pose, Bound<'py, PyDict>)> {
        let (pose, diag) = self.0.process_scan(&ScanFrame::new(vecs(points), timestamp)).map_err(to_py)?;
        Ok((Pose(pose), diagnostics_dict(py, &diag)?))
    }

    fn trajectory(&self) -> Vec<(f64, Pose)> {
        self.0.trajectory().iter().map(|(t, p)| (*t, Pose(*p))).collect()
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0.diagnostics().iter().map(|d| diagnostics_dict(py, d)).collect()
    }
}

/// Synthetic point-cloud scene.
#[pyclass(module = "genz_icp", frozen)]
pub struct Scene(synth::Scene);

#[pymethods]
impl Scene {
    #[staticmethod]
    #[pyo3(signature = (length = 60.0, width = 3.0, height = 3.0, noise_sigma = 0.01, seed = 0))]
    fn corridor(length: f64, width: f64, height: f64, noise_sigma: f64, seed: u64) -> PyResult<Self> {
        Self::build(SceneSpec::corridor(length, width, height), noise_sigma, seed)
    }

    #[staticmethod]
    #[pyo3(signature = (dims = [10.0, 10.0, 3.0], noise_sigma = 0.01, seed = 0))]
    fn room(dims: [f64; 3], noise_sigma: f64, seed: u64) -> PyResult<Self> {
        Self::build(SceneSpec::room(dims), noise_sigma, seed)
    }

    #[staticmethod]
    #[pyo3(signature = (extent = 40.0, n_clusters = 300, cluster_sigma = 0.5, noise_sigma = 0.01, seed = 0))]
    fn clutter(extent: f64, n_clusters: usize, cluster_sigma: f64, noise_sigma: f64, seed: u64) -> PyResult<Self> {
        Self::build(SceneSpec::clutter(extent, n_clusters, cluster_sigma), noise_sigma, seed)
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        arrays(&self.0.points)
    }

    /// Points within `max_range` of the sensor, in the sensor frame, with noise.
    #[pyo3(signature = (pose, max_range = 20.0, subsample = 1.0, seed = 0))]
    fn simulate_scan(&self, pose: &Pose, max_range: f64, subsample: f64, seed: u64) -> PyResult<Vec<[f64; 3]>> {
        let scan = synth::simulate_scan(&self.0, &pose.0, max_range, subsample, seed).map_err(to_py)?;
        Ok(arrays(&scan.points))
    }

    fn __len__(&self) -> usize {
        self.0.points.len()
    }
}

impl Scene {
    fn build(spec: SceneSpec, noise_sigma: f64, seed: u64) -> PyResult<Self> {
        synth::build_scene(&spec.with_noise(noise_sigma).with_seed(seed)).map(Scene).map_err(to_py)
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &ErrorStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("max", s.max)?;
    d.set_item("rmse", s.rmse)?;
    d.set_item("std", s.std)?;
    Ok(d)
}

/// APE, RPE and segment drift of `estimate` against `truth`, both lists of
/// `(timestamp, Pose)`.
#[pyfunction]
#[pyo3(signature = (estimate, truth, segment_lengths = None, rpe_delta = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    estimate: Vec<(f64, Pose)>,
    truth: Vec<(f64, Pose)>,
    segment_lengths: Option<Vec<f64>>,
    rpe_delta: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = EvalConfig { rpe_delta, ..EvalConfig::default() };
    if let Some(l) = segment_lengths {
        cfg.segment_lengths = l;
    }
    let unwrap = |t: Vec<(f64, Pose)>| t.into_iter().map(|(s, p)| (s, p.0)).collect::<Vec<_>>();
    let report = eval::evaluate(&unwrap(estimate), &unwrap(truth), &cfg).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ape", stats_dict(py, &report.ape)?)?;
    d.set_item("rpe", stats_dict(py, &report.rpe)?)?;
    d.set_item("rel_trans_percent", report.rel_trans_percent)?;
    d.set_item("n_matched", report.n_matched)?;
    d.set_item("n_unmatched", report.n_unmatched)?;
    d.set_item("n_segments", report.n_segments)?;
    d.set_item("alignment", Pose(report.alignment))?;
    Ok(d)
}

/// Planar share `n_planar / (n_planar + n_nonplanar)`.
#[pyfunction]
fn compute_alpha(n_planar: usize, n_nonplanar: usize) -> PyResult<f64> {
    solver::compute_alpha(n_planar, n_nonplanar).map_err(to_py)
}

/// `sqrt(λmax / λmin)` of a symmetric 3x3 matrix.
#[pyfunction]
fn condition_number(matrix: [[f64; 3]; 3]) -> PyResult<f64> {
    degeneracy::condition_number(&mat(matrix)).map_err(to_py)
}

/// Reads a TUM or KITTI trajectory; the layout is detected unless given.
#[pyfunction]
#[pyo3(signature = (path, format = None))]
fn read_trajectory(path: PathBuf, format: Option<&str>) -> PyResult<Vec<(f64, Pose)>> {
    let traj = io::read_trajectory(path, self::format(format)?).map_err(to_py)?;
    Ok(traj.into_iter().map(|(t, p)| (t, Pose(p))).collect())
}

#[pyfunction]
#[pyo3(signature = (path, trajectory, format = "tum"))]
fn write_trajectory(path: PathBuf, trajectory: Vec<(f64, Pose)>, format: &str) -> PyResult<()> {
    let f = self::format(Some(format))?.expect("format given");
    let traj: Vec<_> = trajectory.into_iter().map(|(t, p)| (t, p.0)).collect();
    io::write_trajectory(path, &traj, f).map_err(to_py)
}

/// Reads a KITTI velodyne `.bin` scan (intensity dropped).
#[pyfunction]
fn read_kitti_bin(path: PathBuf) -> PyResult<Vec<[f64; 3]>> {
    Ok(arrays(&io::read_kitti_bin(path, 0).map_err(to_py)?.points))
}

#[pyfunction]
fn read_ply(path: PathBuf) -> PyResult<Vec<[f64; 3]>> {
    Ok(arrays(&io::read_ply(path).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (path, points, colors = None))]
fn write_ply(path: PathBuf, points: Vec<[f64; 3]>, colors: Option<Vec<[u8; 3]>>) -> PyResult<()> {
    io::write_ply(path, &vecs(points), colors.as_deref(), PlyEncoding::BinaryLittleEndian).map_err(to_py)
}

#[pymodule]
fn genz_icp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pose>()?;
    m.add_class::<VoxelGrid>()?;
    m.add_class::<Odometry>()?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(condition_number, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(write_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(read_kitti_bin, m)?)?;
    m.add_function(wrap_pyfunction!(read_ply, m)?)?;
    m.add_function(wrap_pyfunction!(write_ply, m)?)?;
    Ok(())
}
