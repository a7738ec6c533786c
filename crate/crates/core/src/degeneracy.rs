//! Conditioning of the translational part of the normal equations.

use crate::error::{Error, Result};
use crate::geometry::Mat3;
use crate::planarity::eigen3_sym;
use crate::solver::LinearSystem;

/// Ratio below which `λ_min / λ_max` counts as rank deficient.
pub const RANK_DEFICIENT_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningReport {
    pub a_bar: Mat3,
    /// Descending, clamped at zero.
    pub eigenvalues: [f64; 3],
    /// `sqrt(λ_max / λ_min)`, or `f64::INFINITY` when rank deficient.
    pub condition_number: f64,
}

impl ConditioningReport {
    pub fn is_rank_deficient(&self) -> bool {
        self.condition_number.is_infinite()
    }
}

/// Top-left 3×3 block of `A`.
pub fn translational_block(sys: &LinearSystem) -> Mat3 {
    sys.a.fixed_view::<3, 3>(0, 0).into_owned()
}

pub fn conditioning(a_bar: &Mat3) -> Result<ConditioningReport> {
    let scale = a_bar.amax().max(1.0);
    let asym = (a_bar - a_bar.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::Contract(format!(
            "translational block is not symmetric (asymmetry {asym:e})"
        )));
    }
    let eig = eigen3_sym(a_bar);
    let eigenvalues = eig.values.map(|v| v.max(0.0));
    let (max, min) = (eigenvalues[0], eigenvalues[2]);
    let condition_number = if max <= 0.0 || min <= RANK_DEFICIENT_RATIO * max {
        f64::INFINITY
    } else {
        (max / min).sqrt().max(1.0)
    };
    Ok(ConditioningReport {
        a_bar: *a_bar,
        eigenvalues,
        condition_number,
    })
}

/// `sqrt(λ_max / λ_min)` of a symmetric PSD matrix; infinite when rank deficient.
pub fn condition_number(a_bar: &Mat3) -> Result<f64> {
    conditioning(a_bar).map(|r| r.condition_number)
}

/// Median of finite and infinite values alike; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else if v[mid - 1].is_infinite() && v[mid].is_infinite() {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use nalgebra::{Matrix6, Vector6};
    use proptest::prelude::*;

    fn system(a: Matrix6<f64>) -> LinearSystem {
        LinearSystem { a, b: Vector6::zeros() }
    }

    #[test]
    fn block_extraction() {
        assert_eq!(translational_block(&system(Matrix6::identity())), Mat3::identity());
        let mut a = Matrix6::from_fn(|i, j| (i * 6 + j) as f64);
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
        assert_eq!(translational_block(&system(a)), Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn known_condition_numbers() {
        assert_eq!(condition_number(&Mat3::identity()).unwrap(), 1.0);
        let c = condition_number(&Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
        assert!(condition_number(&Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0))).unwrap().is_infinite());
        assert!(condition_number(&Mat3::zeros()).unwrap().is_infinite());
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut m = Mat3::identity();
        m[(0, 1)] = 0.5;
        assert!(matches!(condition_number(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
        assert!(median(&[]).is_nan());
    }

    fn psd6() -> impl Strategy<Value = Matrix6<f64>> {
        prop::collection::vec(-1.0..1.0f64, 36).prop_map(|v| {
            let m = Matrix6::from_vec(v);
            m * m.transpose()
        })
    }

    proptest! {
        #[test]
        fn block_matches_indexing(a in psd6()) {
            let block = translational_block(&system(a));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(block[(i, j)], a[(i, j)]);
                }
            }
        }

        #[test]
        fn condition_number_properties(a in psd6(), s in 1e-3..1e3f64) {
            let block = translational_block(&system(a + Matrix6::identity() * 1e-3));
            let c = condition_number(&block).unwrap();
            prop_assert!(c >= 1.0);
            let scaled = condition_number(&(block * s)).unwrap();
            prop_assert!((c - scaled).abs() <= 1e-6 * c);
        }
    }
}
