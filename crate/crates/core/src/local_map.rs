//! Voxel-hashed local map.
//!
//! Points are bucketed by `floor(p / voxel_size)` per axis. Each cell holds at
//! most `max_points_per_voxel` points; inserts into a full cell are dropped, as
//! are inserts closer than `min_point_spacing` to a point already in the cell.

use std::cmp::Ordering;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

pub const DEFAULT_MAP_VOXEL_SIZE: f64 = 1.0;
pub const DEFAULT_MAX_POINTS_PER_VOXEL: usize = 20;
pub const DEFAULT_MAX_RANGE: f64 = 100.0;

/// Integer voxel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey(pub [i64; 3]);

impl VoxelKey {
    pub fn of(p: &Vec3, voxel_size: f64) -> Self {
        VoxelKey([
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        ])
    }

    pub fn center(&self, voxel_size: f64) -> Vec3 {
        let [i, j, k] = self.0;
        Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel_size
    }
}

/// Lexicographic `(x, y, z)` order, used to break distance ties.
pub fn lexicographic(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

fn closer(query: &Vec3, a: &Vec3, b: &Vec3) -> Ordering {
    (a - query)
        .norm_squared()
        .total_cmp(&(b - query).norm_squared())
        .then_with(|| lexicographic(a, b))
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    max_points_per_voxel: usize,
    min_point_spacing: f64,
    cells: FxHashMap<VoxelKey, Vec<Vec3>>,
}

impl Default for VoxelGrid {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_MAP_VOXEL_SIZE,
            max_points_per_voxel: DEFAULT_MAX_POINTS_PER_VOXEL,
            min_point_spacing: 0.0,
            cells: FxHashMap::default(),
        }
    }
}

impl VoxelGrid {
    pub fn new(voxel_size: f64, max_points_per_voxel: usize) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::Contract(format!("voxel size must be > 0, got {voxel_size}")));
        }
        if max_points_per_voxel == 0 {
            return Err(Error::Contract("max_points_per_voxel must be >= 1".into()));
        }
        Ok(Self {
            voxel_size,
            max_points_per_voxel,
            min_point_spacing: 0.0,
            cells: FxHashMap::default(),
        })
    }

    /// Sets the minimum distance between points of one cell. Zero keeps every
    /// insert until the cell is full.
    pub fn with_min_point_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing >= 0.0) {
            return Err(Error::Contract(format!("point spacing must be >= 0, got {spacing}")));
        }
        self.min_point_spacing = spacing;
        Ok(self)
    }

    /// Spacing that lets a planar cell fill up to its capacity: `voxel_size / √max_points`.
    pub fn uniform_spacing(voxel_size: f64, max_points_per_voxel: usize) -> f64 {
        voxel_size / (max_points_per_voxel as f64).sqrt()
    }

    pub fn min_point_spacing(&self) -> f64 {
        self.min_point_spacing
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn max_points_per_voxel(&self) -> usize {
        self.max_points_per_voxel
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&[Vec3]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    /// Occupied cells in key order.
    pub fn cells(&self) -> Vec<(VoxelKey, &[Vec3])> {
        let mut out: Vec<_> = self.cells.iter().map(|(k, v)| (*k, v.as_slice())).collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    /// All stored points, ordered by cell key then insertion order.
    pub fn points(&self) -> Vec<Vec3> {
        self.cells()
            .into_iter()
            .flat_map(|(_, pts)| pts.iter().copied())
            .collect()
    }

    /// Inserts points already expressed in the map frame.
    pub fn insert_points<'a>(&mut self, points: impl IntoIterator<Item = &'a Vec3>) {
        for p in points {
            self.insert_one(*p);
        }
    }

    /// Transforms each point by `pose` and inserts it unless its cell is full.
    pub fn insert_scan(&mut self, points: &[Vec3], pose: &Pose) {
        for p in points {
            self.insert_one(pose.apply(p));
        }
    }

    fn insert_one(&mut self, p: Vec3) {
        let key = VoxelKey::of(&p, self.voxel_size);
        let cap = self.max_points_per_voxel;
        let s2 = self.min_point_spacing * self.min_point_spacing;
        let cell = self.cells.entry(key).or_insert_with(|| Vec::with_capacity(cap.min(32)));
        if cell.len() < cap && (s2 == 0.0 || cell.iter().all(|q| (q - p).norm_squared() >= s2)) {
            cell.push(p);
        }
    }

    fn for_each_in_ball(&self, query: &Vec3, radius: f64, mut f: impl FnMut(&Vec3)) {
        let lo = VoxelKey::of(&(query - Vec3::repeat(radius)), self.voxel_size).0;
        let hi = VoxelKey::of(&(query + Vec3::repeat(radius)), self.voxel_size).0;
        let span = (0..3).map(|a| (hi[a] - lo[a] + 1) as u128).product::<u128>();
        let r2 = radius * radius;
        if span > self.cells.len() as u128 {
            // Ball covers more cells than are occupied: walk the occupied ones.
            for (key, pts) in &self.cells {
                if (0..3).all(|a| key.0[a] >= lo[a] && key.0[a] <= hi[a]) {
                    pts.iter().filter(|p| (*p - query).norm_squared() <= r2).for_each(&mut f);
                }
            }
            return;
        }
        let size = self.voxel_size;
        // Squared distance from the query to the slab of cell index `c` along axis `a`,
        // shrunk slightly since `floor(p / size)` may round a point across the boundary.
        let gap = |a: usize, c: i64| {
            let (lo, hi) = (c as f64 * size, (c + 1) as f64 * size);
            let d = ((lo - query[a]).max(query[a] - hi) - 1e-9 * size).max(0.0);
            d * d
        };
        for i in lo[0]..=hi[0] {
            let gi = gap(0, i);
            for j in lo[1]..=hi[1] {
                let gj = gi + gap(1, j);
                if gj > r2 {
                    continue;
                }
                for k in lo[2]..=hi[2] {
                    if gj + gap(2, k) > r2 {
                        continue;
                    }
                    if let Some(pts) = self.cells.get(&VoxelKey([i, j, k])) {
                        pts.iter().filter(|p| (*p - query).norm_squared() <= r2).for_each(&mut f);
                    }
                }
            }
        }
    }

    /// Closest stored point within `max_dist` of `query`; ties go to the
    /// lexicographically smaller point.
    pub fn nearest_neighbor(&self, query: &Vec3, max_dist: f64) -> Option<Vec3> {
        let mut best: Option<Vec3> = None;
        self.for_each_in_ball(query, max_dist, |p| match best {
            Some(b) if closer(query, p, &b) != Ordering::Less => {}
            _ => best = Some(*p),
        });
        best
    }

    /// Up to `max_count` closest stored points within `radius`, nearest first.
    pub fn radius_neighbors(&self, query: &Vec3, radius: f64, max_count: usize) -> Vec<Vec3> {
        let mut out = Vec::new();
        self.for_each_in_ball(query, radius, |p| out.push(*p));
        if out.len() > max_count {
            out.select_nth_unstable_by(max_count, |a, b| closer(query, a, b));
            out.truncate(max_count);
        }
        out.sort_unstable_by(|a, b| closer(query, a, b));
        out
    }

    /// Drops every cell whose center lies farther than `max_range` from `center`.
    pub fn prune_beyond(&mut self, center: &Vec3, max_range: f64) {
        let size = self.voxel_size;
        let r2 = max_range * max_range;
        self.cells
            .retain(|key, _| (key.center(size) - center).norm_squared() <= r2);
    }

    pub fn clear(&mut self) {
        self.cells.clear();
    }
}

/// Keeps the first point of each occupied voxel, preserving input order.
pub fn voxel_downsample(points: &[Vec3], size: f64) -> Vec<Vec3> {
    let mut seen = FxHashSet::with_capacity_and_hasher(points.len(), Default::default());
    points
        .iter()
        .filter(|p| seen.insert(VoxelKey::of(p, size)))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn assert_capacity(grid: &VoxelGrid) {
        for (key, pts) in grid.cells() {
            assert!(pts.len() <= grid.max_points_per_voxel());
            for p in pts {
                assert_eq!(VoxelKey::of(p, grid.voxel_size()), key);
            }
        }
    }

    fn brute_nearest(points: &[Vec3], q: &Vec3, max_dist: f64) -> Option<Vec3> {
        let mut best: Option<(f64, Vec3)> = None;
        for p in points {
            let d = (p - q).norm_squared();
            if d > max_dist * max_dist {
                continue;
            }
            best = match best {
                None => Some((d, *p)),
                Some((bd, bp)) => {
                    if d < bd || (d == bd && lexicographic(p, &bp) == Ordering::Less) {
                        Some((d, *p))
                    } else {
                        Some((bd, bp))
                    }
                }
            };
        }
        best.map(|(_, p)| p)
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(VoxelGrid::new(0.0, 5).is_err());
        assert!(VoxelGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn insert_single_point() {
        let mut g = VoxelGrid::new(1.0, 20).unwrap();
        let p = Vec3::new(1.5, -0.2, 3.9);
        g.insert_scan(&[p], &Pose::identity());
        assert_eq!(g.len(), 1);
        assert_eq!(g.cell(&VoxelKey([1, -1, 3])).unwrap(), &[p]);
    }

    #[test]
    fn insert_respects_capacity() {
        let mut g = VoxelGrid::new(1.0, 4).unwrap();
        let pts = vec![Vec3::new(0.5, 0.5, 0.5); 5];
        g.insert_scan(&pts, &Pose::identity());
        assert_eq!(g.len(), 4);
        assert_capacity(&g);
    }

    #[test]
    fn insert_respects_spacing() {
        let mut g = VoxelGrid::new(1.0, 20).unwrap().with_min_point_spacing(0.2).unwrap();
        let pts = [
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(0.6, 0.5, 0.5),
            Vec3::new(0.75, 0.5, 0.5),
            // Same distance, other cell: spacing is per cell.
            Vec3::new(1.05, 0.5, 0.5),
        ];
        g.insert_points(&pts);
        assert_eq!(g.points(), vec![pts[0], pts[3], pts[4]]);
        assert!(VoxelGrid::default().with_min_point_spacing(-1.0).is_err());
        assert!((VoxelGrid::uniform_spacing(1.0, 25) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn insert_applies_pose() {
        let mut g = VoxelGrid::default();
        let p = Vec3::new(0.1, 0.2, 0.3);
        g.insert_scan(&[p], &Pose::from_translation(Vec3::new(10.0, 0.0, 0.0)));
        assert_eq!(g.points(), vec![p + Vec3::new(10.0, 0.0, 0.0)]);
    }

    #[test]
    fn nearest_basic() {
        let mut g = VoxelGrid::default();
        assert_eq!(g.nearest_neighbor(&Vec3::zeros(), 1.0), None);
        g.insert_points(&[Vec3::zeros()]);
        assert_eq!(g.nearest_neighbor(&Vec3::new(0.1, 0.0, 0.0), 1.0), Some(Vec3::zeros()));
        assert_eq!(g.nearest_neighbor(&Vec3::new(1.1, 0.0, 0.0), 1.0), None);
    }

    #[test]
    fn nearest_tie_breaks_lexicographically() {
        let mut g = VoxelGrid::default();
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(-1.0, 0.0, 0.0);
        g.insert_points(&[a, b]);
        assert_eq!(g.nearest_neighbor(&Vec3::zeros(), 2.0), Some(b));
    }

    #[test]
    fn radius_basic() {
        let mut g = VoxelGrid::default();
        let pts = [Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        g.insert_points(&pts);
        assert_eq!(g.radius_neighbors(&Vec3::zeros(), 1.0, 10), vec![pts[0], pts[1]]);
        assert_eq!(g.radius_neighbors(&Vec3::zeros(), 1.0, 1), vec![pts[0]]);
    }

    #[test]
    fn prune_cases() {
        let mut g = VoxelGrid::default();
        g.insert_points(&[Vec3::new(1.2, 0.3, 0.1), Vec3::new(-2.0, 1.0, 0.0)]);
        let before = g.points();
        g.prune_beyond(&Vec3::zeros(), 10.0);
        assert_eq!(g.points(), before);

        let mut g = VoxelGrid::default();
        g.insert_points(&[Vec3::new(20.0, 0.0, 0.0)]);
        g.prune_beyond(&Vec3::zeros(), 10.0);
        assert!(g.is_empty());
    }

    #[test]
    fn downsample_cases() {
        let a = Vec3::new(0.1, 0.1, 0.1);
        let b = Vec3::new(0.2, 0.2, 0.2);
        let c = Vec3::new(1.2, 0.2, 0.2);
        assert_eq!(voxel_downsample(&[a, b], 0.5), vec![a]);
        assert_eq!(voxel_downsample(&[a, c], 0.5), vec![a, c]);
    }

    fn cloud(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(
            (-5.0..5.0f64, -5.0..5.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
            1..n,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn queries_match_linear_scan(
            pts in cloud(400),
            size in 0.3..2.0f64,
            queries in cloud(20),
            radius in 0.1..3.0f64,
            max_count in 1usize..30,
        ) {
            let mut g = VoxelGrid::new(size, 1000).unwrap();
            g.insert_points(&pts);
            assert_capacity(&g);
            let stored = g.points();
            for q in &queries {
                prop_assert_eq!(g.nearest_neighbor(q, radius), brute_nearest(&stored, q, radius));

                let mut brute: Vec<Vec3> = stored
                    .iter()
                    .filter(|p| (*p - q).norm_squared() <= radius * radius)
                    .copied()
                    .collect();
                brute.sort_by(|a, b| closer(q, a, b));
                brute.truncate(max_count);
                prop_assert_eq!(g.radius_neighbors(q, radius, max_count), brute);
            }
        }

        #[test]
        fn prune_matches_filter(pts in cloud(300), range in 0.5..6.0f64) {
            let mut g = VoxelGrid::new(1.0, 1000).unwrap();
            g.insert_points(&pts);
            let expected: Vec<Vec3> = g
                .cells()
                .into_iter()
                .filter(|(k, _)| k.center(1.0).norm() <= range)
                .flat_map(|(_, p)| p.to_vec())
                .collect();
            g.prune_beyond(&Vec3::zeros(), range);
            prop_assert_eq!(g.points(), expected);
        }

        #[test]
        fn downsample_is_idempotent_and_counts_voxels(pts in cloud(300), size in 0.2..2.0f64) {
            let once = voxel_downsample(&pts, size);
            prop_assert_eq!(voxel_downsample(&once, size), once.clone());
            let distinct: BTreeSet<[i64; 3]> = pts
                .iter()
                .map(|p| [
                    (p.x / size).floor() as i64,
                    (p.y / size).floor() as i64,
                    (p.z / size).floor() as i64,
                ])
                .collect();
            prop_assert_eq!(once.len(), distinct.len());
        }

        #[test]
        fn capacity_holds_under_random_inserts(pts in cloud(300), cap in 1usize..6) {
            let mut g = VoxelGrid::new(1.0, cap).unwrap();
            for chunk in pts.chunks(17) {
                g.insert_points(chunk);
                assert_capacity(&g);
            }
        }
    }
}
