//! Point-to-plane and point-to-point residuals, linearized about a zero increment.
//!
//! Jacobian columns follow the twist ordering `[t; r]`.

use nalgebra::{Matrix3x6, RowVector6};

use crate::geometry::{skew, Pose, Twist, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneTerm {
    /// `[nᵀ (p×n)ᵀ]`
    pub jacobian: RowVector6<f64>,
    /// `(p − q)·n`
    pub offset: f64,
}

impl PlaneTerm {
    /// First-order model `J·Δ + ē`.
    pub fn linearized(&self, delta: &Twist) -> f64 {
        (self.jacobian * delta.to_vector())[0] + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm {
    /// `[I₃ −[p]×]`
    pub jacobian: Matrix3x6<f64>,
    /// `p − q`
    pub offset: Vec3,
}

impl PointTerm {
    pub fn linearized(&self, delta: &Twist) -> Vec3 {
        self.jacobian * delta.to_vector() + self.offset
    }
}

/// Exact `(R·p + t − q)·n`.
pub fn plane_residual(p: &Vec3, q: &Vec3, n: &Vec3, delta: &Pose) -> f64 {
    (delta.apply(p) - q).dot(n)
}

pub fn plane_term(p: &Vec3, q: &Vec3, n: &Vec3) -> PlaneTerm {
    let pxn = p.cross(n);
    PlaneTerm {
        jacobian: RowVector6::new(n.x, n.y, n.z, pxn.x, pxn.y, pxn.z),
        offset: (p - q).dot(n),
    }
}

/// Exact `R·p + t − q`.
pub fn point_residual(p: &Vec3, q: &Vec3, delta: &Pose) -> Vec3 {
    delta.apply(p) - q
}

pub fn point_term(p: &Vec3, q: &Vec3) -> PointTerm {
    let mut jacobian = Matrix3x6::zeros();
    jacobian.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    jacobian.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(p)));
    PointTerm {
        jacobian,
        offset: p - q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use proptest::prelude::*;

    fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-scale..scale).prop_map(Vec3::from)
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        vec3(1.0).prop_filter("non-zero", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
    }

    fn small_twist() -> impl Strategy<Value = Twist> {
        (unit(), unit(), 0.0..1.0f64).prop_map(|(a, b, mix)| {
            let v = Twist::new(a * mix, b * (1.0 - mix)).to_vector().normalize() * 1e-4;
            Twist::from_vector(&v)
        })
    }

    #[test]
    fn plane_residual_cases() {
        let p = Vec3::new(0.3, 0.2, 0.1);
        assert_eq!(plane_residual(&p, &p, &Vec3::z(), &Pose::identity()), 0.0);
        let r = plane_residual(&Vec3::zeros(), &Vec3::z(), &Vec3::z(), &Pose::identity());
        assert_eq!(r, -1.0);
    }

    #[test]
    fn plane_term_layout() {
        let p = Vec3::x();
        let t = plane_term(&p, &p, &Vec3::z());
        assert_eq!(t.jacobian, RowVector6::new(0.0, 0.0, 1.0, 0.0, -1.0, 0.0));
        assert_eq!(t.offset, 0.0);
        assert_eq!(t.linearized(&Twist::zero()), t.offset);
    }

    #[test]
    fn point_residual_cases() {
        let p = Vec3::new(0.3, 0.2, 0.1);
        assert_eq!(point_residual(&p, &p, &Pose::identity()), Vec3::zeros());
        let shift = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(point_residual(&p, &p, &shift), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn point_term_layout() {
        let q = Vec3::new(1.0, -2.0, 0.5);
        let t = point_term(&Vec3::zeros(), &q);
        assert_eq!(t.jacobian.fixed_view::<3, 3>(0, 0), Mat3::identity());
        assert_eq!(t.jacobian.fixed_view::<3, 3>(0, 3), Mat3::zeros());
        assert_eq!(t.offset, -q);
        assert_eq!(t.linearized(&Twist::zero()), t.offset);

        let p = Vec3::new(1.0, 2.0, 3.0);
        let t = point_term(&p, &q);
        assert_eq!(t.jacobian.fixed_view::<3, 3>(0, 3), -skew(&p));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn plane_residual_matches_composition(p in vec3(10.0), q in vec3(10.0), n in unit(), r in vec3(1.0), t in vec3(5.0)) {
            let delta = Pose::from_twist(&Twist::new(t, r));
            let rp = crate::geometry::exp_so3(&r) * p + t;
            prop_assert!((plane_residual(&p, &q, &n, &delta) - (rp - q).dot(&n)).abs() < 1e-12);
            prop_assert!((point_residual(&p, &q, &delta) - (rp - q)).amax() < 1e-12);
        }

        #[test]
        fn plane_is_projection_of_point(p in vec3(10.0), q in vec3(10.0), n in unit(), r in vec3(1.0), t in vec3(5.0)) {
            let delta = Pose::from_twist(&Twist::new(t, r));
            let e_po = point_residual(&p, &q, &delta);
            prop_assert_eq!(plane_residual(&p, &q, &n, &delta), e_po.dot(&n));
        }

        #[test]
        fn linearization_is_accurate(p in vec3(10.0), q in vec3(10.0), n in unit(), d in small_twist()) {
            let exact = Pose::from_twist(&d);
            let lin = plane_term(&p, &q, &n).linearized(&d);
            prop_assert!((lin - plane_residual(&p, &q, &n, &exact)).abs() <= 1e-7);
            let lin = point_term(&p, &q).linearized(&d);
            prop_assert!((lin - point_residual(&p, &q, &exact)).amax() <= 1e-7);
        }

        #[test]
        fn linearization_error_is_second_order(p in vec3(10.0), q in vec3(10.0), dir in unit()) {
            // Pure rotation: translation enters exactly, so the error is all curvature.
            let err = |scale: f64| {
                let d = Twist::new(Vec3::zeros(), dir * scale);
                let exact = Pose::from_twist(&d);
                (point_term(&p, &q).linearized(&d) - point_residual(&p, &q, &exact)).norm()
            };
            prop_assume!(p.cross(&dir).norm() > 0.5);
            let (big, small) = (err(1e-2), err(5e-3));
            prop_assert!(big / small >= 3.5, "{} / {}", big, small);
        }
    }
}
