use std::fs;
use std::path::{Path, PathBuf};

use genz_core::degeneracy::median;
use genz_core::eval::{evaluate, EvalReport};
use genz_core::io::{
    read_kitti_bin, read_ply, read_trajectory, write_kitti_bin, write_ply, write_trajectory_kitti,
    write_trajectory_tum, PlyEncoding, TrajectoryFormat, LIGHT_BLUE, RED,
};
use genz_core::pipeline::{Odometry, ScanDiagnostics, ScanFrame};
use genz_core::planarity::{classify, Correspondence};
use genz_core::synth::{build_scene, simulate_sequence};
use genz_core::{MetricMode, Pose, Vec3, VoxelGrid};

use crate::config::RunConfig;
use crate::CliError;

pub const DIAGNOSTICS_VERSION: &str = "# genz-diagnostics v1";
pub const DIAGNOSTICS_HEADER: &str = "index,timestamp,alpha_final,n_planar,n_nonplanar,iterations,condition_number_median,runtime_seconds,n_correspondences,converged,registration_failed";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Runs `f` on a pool with `threads` workers (0 = rayon's default).
fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn diagnostics_csv(rows: &[ScanDiagnostics], record_runtime: bool) -> String {
    let mut out = format!("{DIAGNOSTICS_VERSION}\n{DIAGNOSTICS_HEADER}\n");
    for d in rows {
        let runtime = if record_runtime { d.runtime } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            d.index,
            d.timestamp,
            d.alpha_final,
            d.n_planar,
            d.n_nonplanar,
            d.iterations,
            d.condition_number_median,
            runtime,
            d.n_correspondences,
            d.converged,
            d.registration_failed
        ));
    }
    out
}

fn is_scan_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("bin" | "ply")
    )
}

/// `.bin` and `.ply` files of `dir`, sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("dataset directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?.path();
        if path.is_file() && is_scan_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("dataset directory {} holds no .bin or .ply scans", dir.display())));
    }
    Ok(files)
}

/// Reads a scan; timestamps are `index / 10 Hz` for either format.
pub fn read_scan(path: &Path, index: usize) -> Result<ScanFrame, CliError> {
    let named = |e: genz_core::Error| CliError::from(e);
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        let points = read_ply(path).map_err(named)?;
        Ok(ScanFrame::new(points, index as f64 / genz_core::io::kitti::KITTI_HZ))
    } else {
        read_kitti_bin(path, index).map_err(named)
    }
}

fn point_cloud(path: &Path) -> Result<Vec<Vec3>, CliError> {
    Ok(read_scan(path, 0)?.points)
}

fn write_run_outputs(out: &Path, odo: &Odometry, cfg: &RunConfig) -> Result<(), CliError> {
    create_dir(out)?;
    write_trajectory_tum(out.join("trajectory.tum"), odo.trajectory())?;
    write_trajectory_kitti(out.join("trajectory.kitti"), odo.trajectory())?;
    write_file(&out.join("diagnostics.csv"), diagnostics_csv(odo.diagnostics(), cfg.run.record_runtime))?;
    Ok(())
}

fn process(odo: &mut Odometry, scan: &ScanFrame, label: &str) -> Result<(), CliError> {
    odo.process_scan(scan).map(|_| ()).map_err(|e| {
        let code = CliError::from(e);
        match code {
            CliError::Data(m) => CliError::Data(format!("{label}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{label}: {m}")),
            CliError::Usage(m) => CliError::Usage(format!("{label}: {m}")),
        }
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scans: usize,
    pub registration_failures: usize,
    pub final_pose: Pose,
}

/// Odometry over every scan in `dataset`, writing trajectories, diagnostics and
/// the resolved configuration to `out`.
pub fn cmd_run(dataset: &Path, out: &Path, cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let files = dataset_files(dataset)?;
    let odo = with_pool(cfg.run.threads, || -> Result<Odometry, CliError> {
        let mut odo = Odometry::new(cfg.odometry())?;
        for (i, path) in files.iter().enumerate() {
            let scan = read_scan(path, i)?;
            process(&mut odo, &scan, &path.display().to_string())?;
        }
        Ok(odo)
    })??;
    write_run_outputs(out, &odo, cfg)?;
    write_file(&out.join("config.resolved.toml"), cfg.to_toml())?;
    Ok(RunSummary {
        scans: odo.trajectory().len(),
        registration_failures: odo.diagnostics().iter().filter(|d| d.registration_failed).count(),
        final_pose: *odo.last_pose().expect("at least one scan"),
    })
}

/// One metric mode of a synthetic comparison.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: MetricMode,
    pub report: EvalReport,
    /// Translation error of the last pose, no alignment.
    pub end_error: f64,
    /// `end_error` projected on the world x axis (the corridor axis).
    pub along_axis_drift: f64,
    pub mean_alpha: f64,
    pub median_condition_number: f64,
    pub registration_failures: usize,
    pub diagnostics: Vec<ScanDiagnostics>,
    pub trajectory: Vec<(f64, Pose)>,
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub ground_truth: Vec<(f64, Pose)>,
    pub modes: Vec<ModeResult>,
}

pub const COMPARISON_HEADER: &str = "mode,ape_mean,ape_max,ape_rmse,ape_std,rpe_mean,rpe_max,rpe_rmse,rpe_std,rel_trans_percent,end_error,along_axis_drift,mean_alpha,median_condition_number,registration_failures";

impl SynthSummary {
    pub fn mode(&self, mode: MetricMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn comparison_csv(&self) -> String {
        let mut out = format!("{COMPARISON_HEADER}\n");
        for m in &self.modes {
            let r = &m.report;
            let rel = r.rel_trans_percent.map_or_else(|| "NaN".into(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.mode, r.ape.mean, r.ape.max, r.ape.rmse, r.ape.std, r.rpe.mean, r.rpe.max, r.rpe.rmse,
                r.rpe.std, rel, m.end_error, m.along_axis_drift, m.mean_alpha, m.median_condition_number,
                m.registration_failures
            ));
        }
        out
    }

    pub fn comparison_table(&self) -> String {
        let mut out = format!(
            "{:<22} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>12} {:>6}\n",
            "mode", "ape_rmse", "rpe_rmse", "rel_%", "end_err", "axis_dft", "alpha", "cond_med", "fails"
        );
        for m in &self.modes {
            let rel = m.report.rel_trans_percent.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"));
            out.push_str(&format!(
                "{:<22} {:>10.4} {:>10.4} {:>10} {:>10.4} {:>10.4} {:>8.3} {:>12.4e} {:>6}\n",
                m.mode.name(),
                m.report.ape.rmse,
                m.report.rpe.rmse,
                rel,
                m.end_error,
                m.along_axis_drift,
                m.mean_alpha,
                m.median_condition_number,
                m.registration_failures
            ));
        }
        out
    }
}

/// Generates the configured scene and sequence, runs each requested metric mode
/// and writes per-mode outputs plus a comparison table.
pub fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<SynthSummary, CliError> {
    let scene = build_scene(&cfg.scene.spec(cfg.run.seed))?;
    let world = cfg.synth.trajectory();
    let seq = simulate_sequence(&scene, &world, cfg.synth.max_range, cfg.synth.subsample, cfg.run.seed)?;

    // Ground truth in the odometry frame, which starts at the first sensor pose.
    let first_inv = world[0].inverse();
    let ground_truth: Vec<(f64, Pose)> =
        seq.ground_truth.iter().map(|(t, p)| (*t, first_inv.compose(p))).collect();
    let axis = first_inv.rotation() * Vec3::x();

    create_dir(out)?;
    write_trajectory_tum(out.join("ground_truth.tum"), &ground_truth)?;
    write_trajectory_kitti(out.join("ground_truth.kitti"), &ground_truth)?;
    if cfg.synth.write_scene {
        write_ply(out.join("scene.ply"), &scene.points, None, PlyEncoding::BinaryLittleEndian)?;
    }
    if cfg.synth.write_scans {
        let dir = out.join("scans");
        create_dir(&dir)?;
        for (i, scan) in seq.scans.iter().enumerate() {
            write_kitti_bin(dir.join(format!("{i:06}.bin")), &scan.points)?;
        }
    }

    let eval_cfg = cfg.eval.config(&cfg.synth.segment_lengths);
    let mut modes = Vec::new();
    for &mode in &cfg.synth.modes {
        let mut mode_cfg = cfg.clone();
        mode_cfg.icp.metric_mode = mode;
        let odo = with_pool(cfg.run.threads, || -> Result<Odometry, CliError> {
            let mut odo = Odometry::new(mode_cfg.odometry())?;
            for (i, scan) in seq.scans.iter().enumerate() {
                process(&mut odo, scan, &format!("{mode} scan {i}"))?;
            }
            Ok(odo)
        })??;
        write_run_outputs(&out.join(mode.name()), &odo, &mode_cfg)?;

        let report = evaluate(odo.trajectory(), &ground_truth, &eval_cfg)?;
        let end = odo.trajectory().last().expect("non-empty").1.translation()
            - ground_truth.last().expect("non-empty").1.translation();
        let diags = odo.diagnostics().to_vec();
        let conds: Vec<f64> =
            diags.iter().map(|d| d.condition_number_median).filter(|c| !c.is_nan()).collect();
        modes.push(ModeResult {
            mode,
            report,
            end_error: end.norm(),
            along_axis_drift: end.dot(&axis).abs(),
            mean_alpha: diags.iter().map(|d| d.alpha_final).sum::<f64>() / diags.len() as f64,
            median_condition_number: median(&conds),
            registration_failures: diags.iter().filter(|d| d.registration_failed).count(),
            diagnostics: diags,
            trajectory: odo.trajectory().to_vec(),
        });
    }

    let summary = SynthSummary { ground_truth, modes };
    write_file(&out.join("comparison.csv"), summary.comparison_csv())?;
    write_file(&out.join("comparison.txt"), summary.comparison_table())?;
    write_file(&out.join("config.resolved.toml"), cfg.to_toml())?;
    Ok(summary)
}

/// Evaluates `estimate` against `truth`. Formats are detected when not given.
pub fn cmd_eval(
    estimate: &Path,
    truth: &Path,
    estimate_format: Option<TrajectoryFormat>,
    truth_format: Option<TrajectoryFormat>,
    out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<EvalReport, CliError> {
    let est = read_trajectory(estimate, estimate_format)?;
    let gt = read_trajectory(truth, truth_format)?;
    let report = evaluate(&est, &gt, &cfg.eval.config(&cfg.eval.segment_lengths))?;
    if let Some(out) = out {
        create_dir(out)?;
        write_file(&out.join("eval.txt"), format!("{report}\n"))?;
        write_file(&out.join("eval.csv"), format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifySummary {
    pub planar: usize,
    pub nonplanar: usize,
    /// Points without a map match within the correspondence gate; drawn red.
    pub unmatched: usize,
}

/// Colors every scan point by the class of its correspondence: light blue for
/// planar, red for non-planar or unmatched. Scan and map share one frame.
/// Without `map` the configured scene is the map; without `scan` the scene
/// points themselves are classified.
pub fn cmd_classify_debug(
    scan: Option<&Path>,
    map: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
) -> Result<ClassifySummary, CliError> {
    let scene_points = || -> Result<Vec<Vec3>, CliError> {
        Ok(build_scene(&cfg.scene.spec(cfg.run.seed))?.points)
    };
    let points = match scan {
        Some(p) => point_cloud(p)?,
        None => scene_points()?,
    };
    if points.is_empty() {
        return Err(CliError::Data(match scan {
            Some(p) => format!("{}: empty scan", p.display()),
            None => "empty scene".into(),
        }));
    }
    let map_points = match map {
        Some(p) => point_cloud(p)?,
        None if scan.is_none() => points.clone(),
        None => scene_points()?,
    };
    let mut grid = VoxelGrid::new(cfg.map.voxel_size, cfg.map.max_points_per_voxel)?
        .with_min_point_spacing(cfg.map.spacing())?;
    grid.insert_points(&map_points);

    let sensor = Vec3::from(cfg.synth.start);
    let icp = cfg.odometry().icp;
    let classes: Vec<Option<bool>> = with_pool(cfg.run.threads, || {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|p| {
                let target = grid.nearest_neighbor(p, icp.max_corr_distance)?;
                let c = classify(Correspondence { source: *p, target }, &grid, &icp.classifier, &sensor);
                Some(c.is_planar())
            })
            .collect()
    })?;

    let colors: Vec<[u8; 3]> =
        classes.iter().map(|c| if *c == Some(true) { LIGHT_BLUE } else { RED }).collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_ply(out, &points, Some(&colors), PlyEncoding::BinaryLittleEndian)?;
    Ok(ClassifySummary {
        planar: classes.iter().filter(|c| **c == Some(true)).count(),
        nonplanar: classes.iter().filter(|c| **c == Some(false)).count(),
        unmatched: classes.iter().filter(|c| c.is_none()).count(),
    })
}
