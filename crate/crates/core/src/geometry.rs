//! 3-D vectors, rotations and rigid transforms.
//!
//! Rotations are stored as matrices. Increments are six-vectors ordered
//! `[translation; rotation]` and applied on the left of the current pose.

use nalgebra::{Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `|RᵀR − I|_max` and `|det R − 1|` accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this angle `exp_so3` switches to its second-order series.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix `S` with `S·w = v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation for axis-angle `r`.
pub fn exp_so3(r: &Vec3) -> Mat3 {
    let theta = r.norm();
    let k = skew(r);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        Mat3::identity() + k + 0.5 * k2
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Mat3::identity() + a * k + b * k2
    }
}

/// Rotation angle of `r` in radians, in `[0, π]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

fn orthonormality_error(r: &Mat3) -> f64 {
    let gram = r.transpose() * r - Mat3::identity();
    let det = (r.determinant() - 1.0).abs();
    gram.amax().max(det)
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting non-finite input or a rotation that is not in SO(3).
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::Contract("pose has non-finite entries".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > ROTATION_TOLERANCE {
            return Err(Error::Contract(format!(
                "rotation is not orthonormal (error {err:e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Rotation-only pose from an axis-angle vector.
    pub fn from_axis_angle(r: &Vec3) -> Self {
        Self {
            rotation: exp_so3(r),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Exact exponential-style retraction of a twist: rotation `exp_so3(r)`, translation `t`.
    pub fn from_twist(delta: &Twist) -> Self {
        Self {
            rotation: exp_so3(&delta.rotation),
            translation: delta.translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Left-multiplies the increment: `from_twist(delta) ∘ self`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        Pose::from_twist(delta).compose(self)
    }

    pub fn transform_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_error(&self.rotation) <= ROTATION_TOLERANCE
    }
}

/// Pose increment `[tᵀ rᵀ]ᵀ`: translation in meters, rotation as axis-angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub translation: Vec3,
    pub rotation: Vec3,
}

impl Twist {
    pub fn new(translation: Vec3, rotation: Vec3) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            translation: Vec3::new(v[0], v[1], v[2]),
            rotation: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (t, r) = (&self.translation, &self.rotation);
        Vector6::new(t.x, t.y, t.z, r.x, r.y, r.z)
    }

    /// `sqrt(|t|² + |r|²)`, mixing meters and radians.
    pub fn norm(&self) -> f64 {
        (self.translation.norm_squared() + self.rotation.norm_squared()).sqrt()
    }
}
