//! Trajectory evaluation: APE after rigid alignment, fixed-delta RPE and the
//! segment-based relative translational error used by the KITTI benchmark.

use std::fmt;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};

/// Poses further apart in time than this are not associated.
pub const MAX_TIME_DIFFERENCE: f64 = 0.05;

pub const KITTI_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
pub const SYNTHETIC_SEGMENT_LENGTHS: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub rpe_delta: usize,
    pub segment_lengths: Vec<f64>,
    pub max_time_difference: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rpe_delta: 1,
            segment_lengths: KITTI_SEGMENT_LENGTHS.to_vec(),
            max_time_difference: MAX_TIME_DIFFERENCE,
        }
    }
}

impl EvalConfig {
    pub fn synthetic() -> Self {
        Self { segment_lengths: SYNTHETIC_SEGMENT_LENGTHS.to_vec(), ..Self::default() }
    }
}

/// Summary statistics of a set of error magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
    pub rmse: f64,
    pub std: f64,
}

impl ErrorStats {
    /// NaN fields for an empty sample.
    pub fn of(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self { mean: f64::NAN, max: f64::NAN, rmse: f64::NAN, std: f64::NAN };
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let ms = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rmse: ms.sqrt(),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub ape: ErrorStats,
    pub rpe: ErrorStats,
    /// Mean segment error in percent, `None` when the trajectory is shorter than every segment.
    pub rel_trans_percent: Option<f64>,
    pub n_matched: usize,
    pub n_unmatched: usize,
    pub n_segments: usize,
    /// Estimate-to-truth alignment used for APE.
    pub alignment: Pose,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "ape_mean,ape_max,ape_rmse,ape_std,rpe_mean,rpe_max,rpe_rmse,rpe_std,rel_trans_percent,n_matched,n_unmatched";

    pub fn csv_row(&self) -> String {
        let rel = self.rel_trans_percent.map_or_else(|| "NaN".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.ape.mean,
            self.ape.max,
            self.ape.rmse,
            self.ape.std,
            self.rpe.mean,
            self.rpe.max,
            self.rpe.rmse,
            self.rpe.std,
            rel,
            self.n_matched,
            self.n_unmatched
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "matched poses      {} ({} unmatched)", self.n_matched, self.n_unmatched)?;
        for (name, s) in [("APE", &self.ape), ("RPE", &self.rpe)] {
            writeln!(
                f,
                "{name} [m]            mean {:.6}  max {:.6}  rmse {:.6}  std {:.6}",
                s.mean, s.max, s.rmse, s.std
            )?;
        }
        match self.rel_trans_percent {
            Some(v) => write!(f, "rel. translation   {v:.4} % over {} segments", self.n_segments),
            None => write!(f, "rel. translation   n/a (trajectory shorter than all segments)"),
        }
    }
}

/// Pairs each estimate pose with the nearest unused truth pose within `max_dt`.
/// Returns the pairs and the number of poses left unpaired on either side.
pub fn associate(
    estimate: &[(f64, Pose)],
    truth: &[(f64, Pose)],
    max_dt: f64,
) -> (Vec<(Pose, Pose)>, usize) {
    let mut used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (t, est) in estimate {
        let i = truth.partition_point(|(tt, _)| tt < t);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < truth.len() && !used[j])
            .map(|j| (j, (truth[j].0 - t).abs()))
            .filter(|&(_, d)| d <= max_dt)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            used[j] = true;
            pairs.push((*est, truth[j].1));
        }
    }
    let unmatched = (estimate.len() - pairs.len()) + (truth.len() - pairs.len());
    (pairs, unmatched)
}

/// Least-squares rigid transform `T` (no scale) minimizing `Σ |T·src_i − dst_i|²`.
pub fn align_rigid(src: &[Vec3], dst: &[Vec3]) -> Result<Pose> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Evaluation("alignment needs equally many points".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let h: Mat3 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (s - cs) * (d - cd).transpose())
        .sum();
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD failed during alignment".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Pose::new(r, cd - r * cs).map_err(|e| Error::Numerical(format!("alignment: {e}")))
}

fn relative_error(est_a: &Pose, est_b: &Pose, gt_a: &Pose, gt_b: &Pose) -> f64 {
    let est = est_a.inverse().compose(est_b);
    let gt = gt_a.inverse().compose(gt_b);
    gt.inverse().compose(&est).translation().norm()
}

/// Relative error `|segment error| / length` for every start frame and length.
/// A segment ends at the first frame whose travelled distance reaches start + length.
pub fn segment_errors(pairs: &[(Pose, Pose)], lengths: &[f64]) -> Vec<f64> {
    let mut dist = Vec::with_capacity(pairs.len());
    let mut acc = 0.0;
    for (k, (_, gt)) in pairs.iter().enumerate() {
        if k > 0 {
            acc += (gt.translation() - pairs[k - 1].1.translation()).norm();
        }
        dist.push(acc);
    }
    let mut out = Vec::new();
    for i in 0..pairs.len() {
        for &len in lengths {
            let target = dist[i] + len;
            let j = i + dist[i..].partition_point(|&d| d < target);
            if j >= pairs.len() {
                continue;
            }
            let (ea, ga) = &pairs[i];
            let (eb, gb) = &pairs[j];
            out.push(relative_error(ea, eb, ga, gb) / len);
        }
    }
    out
}

pub fn evaluate(estimate: &[(f64, Pose)], truth: &[(f64, Pose)], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.rpe_delta == 0 {
        return Err(Error::Contract("rpe_delta must be at least 1".into()));
    }
    if cfg.segment_lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Contract("segment lengths must be positive".into()));
    }
    let (pairs, n_unmatched) = associate(estimate, truth, cfg.max_time_difference);
    if pairs.len() < 2 {
        return Err(Error::Evaluation(format!(
            "only {} poses could be associated, need at least 2",
            pairs.len()
        )));
    }

    let src: Vec<Vec3> = pairs.iter().map(|(e, _)| *e.translation()).collect();
    let dst: Vec<Vec3> = pairs.iter().map(|(_, g)| *g.translation()).collect();
    let alignment = align_rigid(&src, &dst)?;
    let ape: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (alignment.apply(s) - d).norm()).collect();

    let d = cfg.rpe_delta;
    let rpe: Vec<f64> = (0..pairs.len().saturating_sub(d))
        .map(|i| relative_error(&pairs[i].0, &pairs[i + d].0, &pairs[i].1, &pairs[i + d].1))
        .collect();

    let segs = segment_errors(&pairs, &cfg.segment_lengths);
    let rel_trans_percent = (!segs.is_empty()).then(|| 100.0 * segs.iter().sum::<f64>() / segs.len() as f64);

    Ok(EvalReport {
        ape: ErrorStats::of(&ape),
        rpe: ErrorStats::of(&rpe),
        rel_trans_percent,
        n_matched: pairs.len(),
        n_unmatched,
        n_segments: segs.len(),
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use proptest::prelude::*;

    fn straight(n: usize, step: f64, scale: f64) -> Vec<(f64, Pose)> {
        (0..n)
            .map(|i| (i as f64 * 0.1, Pose::from_translation(Vec3::new(i as f64 * step * scale, 0.0, 0.0))))
            .collect()
    }

    fn curvy(n: usize) -> Vec<(f64, Pose)> {
        (0..n)
            .map(|i| {
                let s = i as f64;
                let r = exp_so3(&Vec3::new(0.0, 0.02 * s.sin(), 0.05 * s));
                (s * 0.1, Pose::new(r, Vec3::new(s, 3.0 * (0.1 * s).sin(), 0.01 * s)).unwrap())
            })
            .collect()
    }

    fn assert_zero(r: &EvalReport) {
        for v in [r.ape.mean, r.ape.max, r.ape.rmse, r.rpe.mean, r.rpe.max, r.rpe.rmse] {
            assert!(v.abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = curvy(50);
        let r = evaluate(&t, &t, &EvalConfig::synthetic()).unwrap();
        assert_zero(&r);
        assert!(r.rel_trans_percent.unwrap().abs() < 1e-9);
        assert_eq!((r.n_matched, r.n_unmatched), (50, 0));
    }

    #[test]
    fn rigid_shift_is_aligned_away() {
        let t = curvy(40);
        let shift = Pose::from_translation(Vec3::new(5.0, 5.0, 0.0));
        let moved: Vec<_> = t.iter().map(|(s, p)| (*s, shift.compose(p))).collect();
        assert_zero(&evaluate(&moved, &t, &EvalConfig::synthetic()).unwrap());
    }

    #[test]
    fn one_percent_drift() {
        let truth = straight(101, 1.0, 1.0);
        let est = straight(101, 1.0, 1.01);
        let cfg = EvalConfig { segment_lengths: vec![10.0, 20.0, 50.0], ..EvalConfig::default() };
        let r = evaluate(&est, &truth, &cfg).unwrap();
        assert!((r.rel_trans_percent.unwrap() - 1.0).abs() < 0.05, "{r}");
        assert!((r.rpe.mean - 0.01).abs() < 1e-9);
    }

    #[test]
    fn short_trajectory_has_no_segments() {
        let t = straight(5, 1.0, 1.0);
        let r = evaluate(&t, &t, &EvalConfig::default()).unwrap();
        assert_eq!(r.rel_trans_percent, None);
    }

    #[test]
    fn association_window() {
        let truth = straight(10, 1.0, 1.0);
        let late: Vec<_> = truth.iter().map(|(t, p)| (t + 0.03, *p)).collect();
        let (pairs, un) = associate(&late, &truth, MAX_TIME_DIFFERENCE);
        assert_eq!((pairs.len(), un), (10, 0));
        let later: Vec<_> = truth.iter().map(|(t, p)| (t + 10.0, *p)).collect();
        let (pairs, un) = associate(&later, &truth, MAX_TIME_DIFFERENCE);
        assert_eq!((pairs.len(), un), (0, 20));
        assert!(matches!(evaluate(&later, &truth, &EvalConfig::default()), Err(Error::Evaluation(_))));
        let partial = &truth[..1];
        assert!(matches!(evaluate(partial, &truth, &EvalConfig::default()), Err(Error::Evaluation(_))));
    }

    fn rigid() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-50.0..50.0f64))
            .prop_map(|(r, t)| Pose::new(exp_so3(&Vec3::from(r)), Vec3::from(t)).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariance(pre in rigid(), global in rigid(), noise in prop::collection::vec(prop::array::uniform3(-0.3..0.3f64), 30)) {
            let truth = curvy(30);
            let est: Vec<_> = truth.iter().zip(&noise).map(|((t, p), n)| {
                (*t, Pose::from_translation(Vec3::from(*n)).compose(p))
            }).collect();
            let cfg = EvalConfig::synthetic();
            let base = evaluate(&est, &truth, &cfg).unwrap();

            let pre_est: Vec<_> = est.iter().map(|(t, p)| (*t, pre.compose(p))).collect();
            let r = evaluate(&pre_est, &truth, &cfg).unwrap();
            prop_assert!((r.ape.rmse - base.ape.rmse).abs() < 1e-8);
            prop_assert!((r.rpe.rmse - base.rpe.rmse).abs() < 1e-8);

            let g = |v: &[(f64, Pose)]| v.iter().map(|(t, p)| (*t, global.compose(p))).collect::<Vec<_>>();
            let r = evaluate(&g(&est), &g(&truth), &cfg).unwrap();
            prop_assert!((r.rpe.rmse - base.rpe.rmse).abs() < 1e-8);
            prop_assert!((r.ape.rmse - base.ape.rmse).abs() < 1e-8);

            prop_assert!(base.ape.rmse.powi(2) >= base.ape.mean.powi(2) - 1e-12);
            prop_assert!(base.ape.max >= base.ape.mean);
        }
    }
}
