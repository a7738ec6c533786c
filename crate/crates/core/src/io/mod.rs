//! Dataset readers and writers.

pub mod kitti;
pub mod ply;
pub mod trajectory;

pub use kitti::{read_kitti_bin, write_kitti_bin};
pub use ply::{read_ply, write_ply, PlyEncoding, LIGHT_BLUE, RED};
pub use trajectory::{
    read_trajectory, write_trajectory, write_trajectory_kitti, write_trajectory_tum,
    TrajectoryFormat,
};
