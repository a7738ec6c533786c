//! LiDAR odometry with adaptive blending of point-to-plane and point-to-point
//! ICP error metrics.
//!
//! Each correspondence is labelled planar or non-planar from the PCA of its
//! map neighborhood. Planar pairs contribute point-to-plane residuals,
//! the rest point-to-point, and the two populations are weighted by the
//! planar fraction `α` in the normal equations.

pub mod degeneracy;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod local_map;
pub mod pipeline;
pub mod planarity;
pub mod residuals;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Mat3, Pose, Twist, Vec3};
pub use local_map::VoxelGrid;
pub use planarity::ClassifierConfig;
pub use solver::{register, IcpConfig, IterationRecord, MetricMode, Registration};
pub use eval::{evaluate, EvalConfig, EvalReport};
pub use pipeline::{Odometry, OdometryConfig, ScanDiagnostics, ScanFrame};
pub use synth::{build_scene, simulate_scan, simulate_sequence, Scene, SceneKind, SceneSpec, SimulatedSequence};
