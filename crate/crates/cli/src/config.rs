//! Layered run configuration: defaults, then a TOML file, then `GENZ_*`
//! environment variables, then `--set section.key=value` flags.

use std::fmt::Write as _;
use std::path::Path;

use genz_core::eval::{EvalConfig, KITTI_SEGMENT_LENGTHS, MAX_TIME_DIFFERENCE, SYNTHETIC_SEGMENT_LENGTHS};
use genz_core::pipeline::{MapConfig, OdometryConfig, PreprocessConfig};
use genz_core::synth::{offset_trajectory, straight_trajectory, zigzag_trajectory, SceneKind, SceneSpec};
use genz_core::{ClassifierConfig, IcpConfig, MetricMode, Pose, Vec3, VoxelGrid};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const ENV_PREFIX: &str = "GENZ_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Top-level seed; scene generation and scan simulation derive from it.
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    /// Write measured wall time into diagnostics. Off keeps outputs byte-identical.
    pub record_runtime: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, threads: 0, record_runtime: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneType {
    Corridor,
    Room,
    Clutter,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub kind: SceneType,
    /// Corridor and room extents; a room uses length × width × height.
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub extent: f64,
    pub n_clusters: usize,
    pub cluster_sigma: f64,
    pub clutter_fraction: f64,
    pub surface_density: f64,
    pub noise_sigma: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            kind: SceneType::Corridor,
            length: 60.0,
            width: 3.0,
            height: 3.0,
            extent: 40.0,
            n_clusters: 300,
            cluster_sigma: 0.5,
            clutter_fraction: 0.3,
            surface_density: 50.0,
            noise_sigma: 0.01,
        }
    }
}

impl SceneSection {
    pub fn spec(&self, seed: u64) -> SceneSpec {
        let kind = match self.kind {
            SceneType::Corridor => SceneKind::Corridor {
                length: self.length,
                width: self.width,
                height: self.height,
            },
            SceneType::Room => SceneKind::Room { dims: [self.length, self.width, self.height] },
            SceneType::Clutter => SceneKind::Clutter {
                extent: self.extent,
                n_clusters: self.n_clusters,
                cluster_sigma: self.cluster_sigma,
            },
            SceneType::Mixed => SceneKind::Mixed {
                length: self.length,
                width: self.width,
                height: self.height,
                clutter_fraction: self.clutter_fraction,
                cluster_sigma: self.cluster_sigma,
            },
        };
        SceneSpec {
            kind,
            surface_density: self.surface_density,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryShape {
    Straight,
    Zigzag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub trajectory: TrajectoryShape,
    pub length: f64,
    pub step: f64,
    pub heading_deg: f64,
    pub leg: usize,
    pub start: [f64; 3],
    pub max_range: f64,
    pub subsample: f64,
    pub modes: Vec<MetricMode>,
    pub segment_lengths: Vec<f64>,
    pub write_scans: bool,
    pub write_scene: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryShape::Straight,
            length: 39.0,
            step: 1.0,
            heading_deg: 15.0,
            leg: 5,
            start: [-19.5, 0.0, 1.5],
            max_range: 20.0,
            subsample: 1.0,
            modes: MetricMode::ALL.to_vec(),
            segment_lengths: SYNTHETIC_SEGMENT_LENGTHS.to_vec(),
            write_scans: false,
            write_scene: false,
        }
    }
}

impl SynthSection {
    pub fn trajectory(&self) -> Vec<Pose> {
        let local = match self.trajectory {
            TrajectoryShape::Straight => straight_trajectory(self.length, self.step),
            TrajectoryShape::Zigzag => {
                zigzag_trajectory(self.length, self.step, self.heading_deg.to_radians(), self.leg)
            }
        };
        offset_trajectory(&local, &Pose::from_translation(Vec3::from(self.start)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub rpe_delta: usize,
    pub segment_lengths: Vec<f64>,
    pub max_time_difference: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            rpe_delta: 1,
            segment_lengths: KITTI_SEGMENT_LENGTHS.to_vec(),
            max_time_difference: MAX_TIME_DIFFERENCE,
        }
    }
}

impl EvalSection {
    pub fn config(&self, segment_lengths: &[f64]) -> EvalConfig {
        EvalConfig {
            rpe_delta: self.rpe_delta,
            segment_lengths: segment_lengths.to_vec(),
            max_time_difference: self.max_time_difference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub icp: IcpConfig,
    pub classifier: ClassifierConfig,
    pub map: MapConfig,
    pub preprocess: PreprocessConfig,
    pub scene: SceneSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

/// Every key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "top-level random seed"),
    ("run.threads", "worker threads, 0 = one per core"),
    ("run.record_runtime", "write wall time to diagnostics (breaks byte-identical reruns)"),
    ("icp.max_iterations", "ICP iteration cap per scan"),
    ("icp.convergence_eps", "stop when |Δ| (m and rad mixed) falls below this"),
    ("icp.max_corr_distance", "correspondence gate [m]"),
    ("icp.metric_mode", "genz | force_point_to_plane | force_point_to_point"),
    ("icp.classify_every_iteration", "re-classify every iteration instead of once per scan"),
    ("classifier.tau_num", "minimum neighbor count for a plane fit"),
    ("classifier.tau_planar", "surface-variation threshold for planar"),
    ("classifier.neighbor_radius", "neighborhood radius [m]"),
    ("classifier.neighbor_max_count", "neighbors used per fit"),
    ("map.voxel_size", "map voxel edge [m]"),
    ("map.max_points_per_voxel", "map voxel capacity"),
    ("map.min_point_spacing", "minimum spacing inside a voxel [m]; unset = voxel_size/sqrt(capacity)"),
    ("map.insert_raw", "insert range-clipped scans instead of downsampled ones"),
    ("preprocess.min_range", "drop returns closer than this [m]"),
    ("preprocess.max_range", "drop returns farther than this [m]; also the map radius"),
    ("preprocess.voxel_size", "scan downsampling voxel [m]"),
    ("scene.kind", "corridor | room | clutter | mixed"),
    ("scene.length", "corridor/room extent along x [m]"),
    ("scene.width", "corridor/room extent along y [m]"),
    ("scene.height", "corridor/room extent along z [m]"),
    ("scene.extent", "clutter cube edge [m]"),
    ("scene.n_clusters", "clutter cluster count"),
    ("scene.cluster_sigma", "cluster standard deviation [m]"),
    ("scene.clutter_fraction", "share of clutter points in a mixed scene"),
    ("scene.surface_density", "points per square meter"),
    ("scene.noise_sigma", "scan noise standard deviation [m]"),
    ("synth.trajectory", "straight | zigzag"),
    ("synth.length", "path length [m]"),
    ("synth.step", "distance between scans [m]"),
    ("synth.heading_deg", "zigzag heading magnitude [deg]"),
    ("synth.leg", "scans per zigzag leg"),
    ("synth.start", "first sensor position [m]"),
    ("synth.max_range", "simulated sensor range [m]"),
    ("synth.subsample", "fraction of visible points kept per scan"),
    ("synth.modes", "metric modes to compare"),
    ("synth.segment_lengths", "segment lengths for relative error [m]"),
    ("synth.write_scans", "also write scans/NNNNNN.bin"),
    ("synth.write_scene", "also write scene.ply"),
    ("eval.rpe_delta", "RPE frame offset"),
    ("eval.segment_lengths", "segment lengths for relative error [m]"),
    ("eval.max_time_difference", "timestamp association window [s]"),
];

fn default_table() -> Table {
    match Value::try_from(RunConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("defaults serialize to a table"),
    }
}

/// Help text listing every key, its default, and its environment variable.
pub fn keys_help() -> String {
    let defaults = default_table();
    let mut out = String::from("Configuration keys (TOML section.key = default):\n");
    for (key, doc) in KEYS {
        let (section, name) = key.split_once('.').expect("dotted key");
        let default = defaults
            .get(section)
            .and_then(|s| s.get(name))
            .map_or_else(|| "auto".to_string(), ToString::to_string);
        writeln!(out, "  {key} = {default}\n      {doc}").unwrap();
    }
    write!(
        out,
        "\nPrecedence: --set section.key=value > {ENV_PREFIX}SECTION_KEY environment variable > --config file > defaults."
    )
    .unwrap();
    out
}

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// A bare string that does not parse as a TOML value is taken as a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_key(table: &mut Table, key: &str, value: Value, origin: &str) -> Result<(), CliError> {
    let (section, name) = key
        .split_once('.')
        .ok_or_else(|| CliError::Usage(format!("{origin}: key `{key}` must look like section.key")))?;
    let sec = table
        .get_mut(section)
        .and_then(Value::as_table_mut)
        .ok_or_else(|| CliError::Usage(format!("{origin}: unknown section `{section}`")))?;
    sec.insert(name.to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, file: Table, origin: &str) -> Result<(), CliError> {
    for (section, value) in file {
        match value {
            Value::Table(entries) => {
                for (k, v) in entries {
                    set_key(base, &format!("{section}.{k}"), v, origin)?;
                }
            }
            _ => return Err(CliError::Usage(format!("{origin}: top-level key `{section}` is not a section"))),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Resolves the configuration. `env` is consulted for every documented key.
    pub fn load(
        path: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        overrides: &[String],
    ) -> Result<Self, CliError> {
        let mut table = default_table();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let file: Table = text
                .parse()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            merge(&mut table, file, &path.display().to_string())?;
        }
        for (key, _) in KEYS {
            let var = env_var_name(key);
            if let Some(raw) = env(&var) {
                set_key(&mut table, key, parse_value(&raw), &var)?;
            }
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set {item}: expected section.key=value")))?;
            set_key(&mut table, key.trim(), parse_value(raw.trim()), "--set")?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_env(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        Self::load(path, |k| std::env::var(k).ok(), overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: genz_core::Error| CliError::Usage(e.to_string());
        self.odometry().icp.validate().map_err(usage)?;
        VoxelGrid::new(self.map.voxel_size, self.map.max_points_per_voxel)
            .and_then(|g| g.with_min_point_spacing(self.map.spacing()))
            .map_err(usage)?;
        let p = &self.preprocess;
        if !(p.voxel_size > 0.0 && p.min_range >= 0.0 && p.max_range > p.min_range) {
            return Err(CliError::Usage("preprocess: need voxel_size > 0 and 0 <= min_range < max_range".into()));
        }
        self.scene.spec(self.run.seed).validate().map_err(usage)?;
        let s = &self.synth;
        if !(s.step > 0.0 && s.length >= 0.0 && s.max_range > 0.0 && s.subsample > 0.0 && s.subsample <= 1.0) {
            return Err(CliError::Usage("synth: need step > 0, length >= 0, max_range > 0, subsample in (0, 1]".into()));
        }
        if s.modes.is_empty() {
            return Err(CliError::Usage("synth.modes must name at least one metric mode".into()));
        }
        for lengths in [&s.segment_lengths, &self.eval.segment_lengths] {
            if lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(CliError::Usage("segment lengths must be positive".into()));
            }
        }
        if self.eval.rpe_delta == 0 || !(self.eval.max_time_difference >= 0.0) {
            return Err(CliError::Usage("eval: need rpe_delta >= 1 and max_time_difference >= 0".into()));
        }
        Ok(())
    }

    pub fn odometry(&self) -> OdometryConfig {
        OdometryConfig {
            icp: IcpConfig { classifier: self.classifier, ..self.icp },
            map: self.map,
            preprocess: self.preprocess,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn documented_keys_cover_every_field() {
        let defaults = default_table();
        let mut serialized: BTreeSet<String> = defaults
            .iter()
            .flat_map(|(s, v)| v.as_table().unwrap().keys().map(move |k| format!("{s}.{k}")))
            .collect();
        // Optional keys have no serialized default.
        serialized.insert("map.min_point_spacing".into());
        let documented: BTreeSet<String> = KEYS.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(serialized, documented);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::load(None, no_env, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn precedence_is_flag_env_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[icp]\nmax_iterations = 7\nmax_corr_distance = 2.0\n[scene]\nkind = \"room\"\n").unwrap();
        let env: BTreeMap<&str, &str> =
            [("GENZ_ICP_MAX_ITERATIONS", "9"), ("GENZ_ICP_METRIC_MODE", "force_point_to_point")].into();
        let lookup = |k: &str| env.get(k).map(|v| v.to_string());

        let cfg = RunConfig::load(Some(&path), lookup, &[]).unwrap();
        assert_eq!(cfg.icp.max_iterations, 9);
        assert_eq!(cfg.icp.max_corr_distance, 2.0);
        assert_eq!(cfg.icp.metric_mode, MetricMode::ForcePointToPoint);
        assert_eq!(cfg.scene.kind, SceneType::Room);

        let cfg = RunConfig::load(Some(&path), lookup, &["icp.max_iterations=11".into(), "map.min_point_spacing=0.1".into()]).unwrap();
        assert_eq!(cfg.icp.max_iterations, 11);
        assert_eq!(cfg.map.min_point_spacing, Some(0.1));
        assert_eq!(cfg.odometry().icp.classifier, cfg.classifier);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["icp.max_iteration=3", "nope.key=1", "noseparator"] {
            assert!(matches!(RunConfig::load(None, no_env, &[bad.into()]), Err(CliError::Usage(_))), "{bad}");
        }
        assert!(RunConfig::load(None, no_env, &["icp.metric_mode=bogus".into()]).is_err());
        assert!(RunConfig::load(None, no_env, &["classifier.tau_planar=0.9".into()]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[map]\nvoxel = 2.0\n").unwrap();
        let e = RunConfig::load(Some(&path), no_env, &[]).unwrap_err();
        assert!(e.to_string().contains("voxel"), "{e}");
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let h = keys_help();
        for (k, _) in KEYS {
            assert!(h.contains(&format!("{k} = ")), "{k}");
        }
        assert!(h.contains("icp.max_iterations = 100"));
        assert!(h.contains("map.min_point_spacing = auto"));
    }

    #[test]
    fn env_names() {
        assert_eq!(env_var_name("icp.max_corr_distance"), "GENZ_ICP_MAX_CORR_DISTANCE");
    }
}
