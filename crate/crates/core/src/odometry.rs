//! Victim scan-to-map odometry: voxel map, constant-velocity prediction and
//! point-to-point ICP with a hard maximum-correspondence-distance gate.

use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix3, Vector3};
use rustc_hash::{FxHashMap, FxHasher};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose, Vec3};
use crate::world::RangeScan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    pub convergence_translation: f64,
    pub convergence_rotation: f64,
    pub downsample_voxel: f64,
    pub map_voxel: f64,
    pub map_max_points_per_voxel: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 1.0,
            max_iterations: 30,
            convergence_translation: 1e-4,
            convergence_rotation: 1e-5,
            downsample_voxel: 0.5,
            map_voxel: 1.0,
            map_max_points_per_voxel: 8,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_correspondence_distance", self.max_correspondence_distance),
            ("convergence_translation", self.convergence_translation),
            ("convergence_rotation", self.convergence_rotation),
            ("downsample_voxel", self.downsample_voxel),
            ("map_voxel", self.map_voxel),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidIcp(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.map_max_points_per_voxel == 0 {
            return Err(Error::InvalidIcp("max_iterations and map_max_points_per_voxel must be >= 1".into()));
        }
        Ok(())
    }
}

type VoxelKey = [i32; 3];

fn voxel_key(p: &Point3, size: f64) -> VoxelKey {
    [
        (p.x / size).floor() as i32,
        (p.y / size).floor() as i32,
        (p.z / size).floor() as i32,
    ]
}

/// One centroid per occupied voxel, in first-seen voxel order.
pub fn voxel_downsample(points: &[Point3], voxel: f64) -> Vec<Point3> {
    let mut index: FxHashMap<VoxelKey, usize> = FxHashMap::default();
    let mut acc: Vec<(Vec3, usize)> = Vec::new();
    for p in points {
        let slot = *index.entry(voxel_key(p, voxel)).or_insert_with(|| {
            acc.push((Vec3::zeros(), 0));
            acc.len() - 1
        });
        acc[slot].0 += p.coords;
        acc[slot].1 += 1;
    }
    acc.into_iter().map(|(sum, n)| Point3::from(sum / n as f64)).collect()
}

/// Spatial hash from voxel index to the world-frame points stored there.
#[derive(Clone, Debug)]
pub struct VoxelMap {
    voxel: f64,
    max_per_voxel: usize,
    cells: FxHashMap<VoxelKey, Vec<Point3>>,
    len: usize,
}

impl VoxelMap {
    pub fn new(voxel: f64, max_per_voxel: usize) -> Self {
        Self {
            voxel,
            max_per_voxel,
            cells: FxHashMap::default(),
            len: 0,
        }
    }

    pub fn from_config(cfg: &IcpConfig) -> Self {
        Self::new(cfg.map_voxel, cfg.map_max_points_per_voxel)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn voxel_count(&self) -> usize {
        self.cells.len()
    }

    pub fn contains_voxel_of(&self, p: &Point3) -> bool {
        self.cells.contains_key(&voxel_key(p, self.voxel))
    }

    pub fn voxel_keys(&self) -> impl Iterator<Item = &VoxelKey> {
        self.cells.keys()
    }

    pub fn clear(&mut self) {
        self.cells.clear();
        self.len = 0;
    }

    /// Inserts world-frame points; a full voxel silently drops newcomers.
    pub fn insert(&mut self, points: impl IntoIterator<Item = Point3>) {
        for p in points {
            let cell = self.cells.entry(voxel_key(&p, self.voxel)).or_default();
            if cell.len() < self.max_per_voxel {
                cell.push(p);
                self.len += 1;
            }
        }
    }

    /// Nearest stored point within `max_dist`, searching enough neighbouring
    /// voxels to be exact for that radius.
    pub fn nearest(&self, q: &Point3, max_dist: f64) -> Option<(Point3, f64)> {
        let reach = (max_dist / self.voxel).ceil().max(1.0) as i32;
        let k = voxel_key(q, self.voxel);
        let mut best: Option<(Point3, f64)> = None;
        let mut best_d2 = max_dist * max_dist;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(cell) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for p in cell {
                        let d2 = (p - q).norm_squared();
                        if d2 <= best_d2 && best.map_or(true, |(_, b)| d2 < b) {
                            best_d2 = d2;
                            best = Some((*p, d2));
                        }
                    }
                }
            }
        }
        best.map(|(p, d2)| (p, d2.sqrt()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RegistrationDiagnostics {
    pub inliers: usize,
    pub residual: f64,
    pub iterations: usize,
    pub diverged: bool,
}

/// Number of scan points with a map neighbour inside `gate` at `pose`.
pub fn count_inliers(map: &VoxelMap, scan_points: &[Point3], pose: &Pose, gate: f64) -> usize {
    scan_points
        .iter()
        .filter(|p| map.nearest(&pose.transform_point(p), gate).is_some())
        .count()
}

/// Closed-form rigid alignment of `source` onto `target` (paired by index).
pub fn solve_rigid(source: &[Point3], target: &[Point3]) -> Pose {
    let n = source.len() as f64;
    let cs = source.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let ct = target.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords - cs) * (t.coords - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let (min_idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mut v_fixed = v;
        v_fixed.set_column(min_idx, &(-v.column(min_idx)));
        r = v_fixed * u.transpose();
    }
    let rot = nalgebra::UnitQuaternion::from_matrix(&r);
    let t: Vector3<f64> = ct - rot * cs;
    Pose::new(rot, t)
}

/// Gated point-to-point ICP of sensor-frame `scan_points` against `map`.
pub fn register_scan(map: &VoxelMap, scan_points: &[Point3], guess: &Pose, cfg: &IcpConfig) -> (Pose, RegistrationDiagnostics) {
    let gate = cfg.max_correspondence_distance;
    let mut pose = *guess;
    let mut diag = RegistrationDiagnostics::default();
    let mut src = Vec::with_capacity(scan_points.len());
    let mut dst = Vec::with_capacity(scan_points.len());
    for it in 1..=cfg.max_iterations {
        src.clear();
        dst.clear();
        let mut residual = 0.0;
        for p in scan_points {
            let q = pose.transform_point(p);
            if let Some((m, d)) = map.nearest(&q, gate) {
                src.push(q);
                dst.push(m);
                residual += d;
            }
        }
        if src.is_empty() {
            return (
                *guess,
                RegistrationDiagnostics {
                    inliers: 0,
                    residual: 0.0,
                    iterations: it,
                    diverged: true,
                },
            );
        }
        diag = RegistrationDiagnostics {
            inliers: src.len(),
            residual: residual / src.len() as f64,
            iterations: it,
            diverged: false,
        };
        let delta = if src.len() >= 3 {
            solve_rigid(&src, &dst)
        } else {
            let shift = dst.iter().zip(&src).fold(Vec3::zeros(), |a, (d, s)| a + (d - s)) / src.len() as f64;
            Pose::new(nalgebra::UnitQuaternion::identity(), shift)
        };
        pose = delta.compose(&pose);
        if delta.translation().norm() < cfg.convergence_translation
            && delta.rotation_angle() < cfg.convergence_rotation
        {
            break;
        }
    }
    (pose, diag)
}

/// Transforms sensor-frame points by `pose` and inserts them. Insertion
/// order is a hash of each point's sensor-frame coordinates: scans arrive
/// channel-major, so in-order insertion would let the first channels claim
/// every capped voxel.
pub fn update_map(map: &mut VoxelMap, scan_points: &[Point3], pose: &Pose) {
    let mut keyed: Vec<(u64, Point3)> = scan_points
        .iter()
        .map(|p| {
            let mut h = FxHasher::default();
            [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()].hash(&mut h);
            (h.finish(), pose.transform_point(p))
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    map.insert(keyed.into_iter().map(|(_, p)| p));
}

const HISTORY_LEN: usize = 8;

/// Mutable state of one odometry instance.
#[derive(Clone, Debug)]
pub struct OdometryState {
    pub cfg: IcpConfig,
    pub map: VoxelMap,
    history: VecDeque<Pose>,
    pub frame_index: usize,
    initial: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameResult {
    pub pose: Pose,
    pub diagnostics: RegistrationDiagnostics,
}

impl OdometryState {
    /// `prior_motion` seeds the constant-velocity model with the body-frame
    /// motion of the frame preceding `initial`.
    pub fn new(cfg: IcpConfig, initial: Pose, prior_motion: Option<Pose>) -> Self {
        let mut s = Self {
            map: VoxelMap::from_config(&cfg),
            cfg,
            history: VecDeque::with_capacity(HISTORY_LEN),
            frame_index: 0,
            initial,
        };
        s.seed_history(prior_motion);
        s
    }

    fn seed_history(&mut self, prior_motion: Option<Pose>) {
        self.history.clear();
        if let Some(m) = prior_motion {
            self.history.push_back(self.initial.compose(&m.inverse()));
        }
    }

    /// Drops the map and pose history, re-anchoring at `initial`.
    pub fn reset(&mut self, initial: Pose, prior_motion: Option<Pose>) {
        self.map.clear();
        self.frame_index = 0;
        self.initial = initial;
        self.seed_history(prior_motion);
    }

    pub fn history(&self) -> impl Iterator<Item = &Pose> {
        self.history.iter()
    }

    pub fn current_pose(&self) -> Option<&Pose> {
        if self.frame_index == 0 {
            None
        } else {
            self.history.back()
        }
    }

    fn push(&mut self, pose: Pose) {
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back(pose);
    }

    /// Registers one frame of sensor-frame points and grows the map.
    pub fn step(&mut self, points: &[Point3]) -> FrameResult {
        let keypoints = voxel_downsample(points, self.cfg.downsample_voxel);
        let result = if self.frame_index == 0 {
            FrameResult {
                pose: self.initial,
                diagnostics: RegistrationDiagnostics::default(),
            }
        } else {
            let guess = predict_initial_guess(self);
            if self.map.is_empty() {
                FrameResult {
                    pose: guess,
                    diagnostics: RegistrationDiagnostics {
                        diverged: true,
                        ..Default::default()
                    },
                }
            } else {
                let (pose, diagnostics) = register_scan(&self.map, &keypoints, &guess, &self.cfg);
                FrameResult { pose, diagnostics }
            }
        };
        update_map(&mut self.map, &keypoints, &result.pose);
        self.push(result.pose);
        self.frame_index += 1;
        result
    }
}

/// Constant-velocity guess from the last two history poses.
pub fn predict_initial_guess(state: &OdometryState) -> Pose {
    let n = state.history.len();
    match n {
        0 => Pose::identity(),
        1 => state.history[0],
        _ => {
            let prev = &state.history[n - 2];
            let last = &state.history[n - 1];
            last.compose(&prev.between(last))
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OdometryRun {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
    pub diagnostics: Vec<RegistrationDiagnostics>,
}

pub fn run_odometry(scans: &[RangeScan], cfg: &IcpConfig, initial: Pose, prior_motion: Option<Pose>) -> Result<OdometryRun> {
    if scans.is_empty() {
        return Err(Error::Empty("scan sequence"));
    }
    cfg.validate()?;
    let mut state = OdometryState::new(cfg.clone(), initial, prior_motion);
    let mut run = OdometryRun::default();
    for scan in scans {
        let r = state.step(&scan.points());
        run.timestamps.push(scan.timestamp);
        run.poses.push(r.pose);
        run.diagnostics.push(r.diagnostics);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{fixtures, raycast_scan, sample_trajectory, LidarSpec};
    use std::sync::Arc;

    fn grid_plane(z: f64, step: f64, half: f64) -> Vec<Point3> {
        let n = (2.0 * half / step) as i32;
        let mut pts = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                pts.push(Point3::new(-half + i as f64 * step, -half + j as f64 * step, z));
            }
        }
        pts
    }

    fn structured_cloud() -> Vec<Point3> {
        // three orthogonal walls plus a box, sampled at random so there is no
        // lattice for a translated copy to snap onto
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        for _ in 0..1500 {
            let a = rng.gen_range(0.0..6.0);
            let b = rng.gen_range(0.0..3.0);
            pts.push(match pts.len() % 3 {
                0 => Point3::new(a, b, 0.0),
                1 => Point3::new(0.0, a, b),
                _ => Point3::new(a, 0.0, b),
            });
        }
        for _ in 0..200 {
            pts.push(Point3::new(rng.gen_range(3.0..3.5), 2.0, rng.gen_range(0.5..1.0)));
            pts.push(Point3::new(3.0, rng.gen_range(1.5..2.0), rng.gen_range(0.5..1.0)));
        }
        pts
    }

    fn cfg() -> IcpConfig {
        IcpConfig {
            map_max_points_per_voxel: 1000,
            ..IcpConfig::default()
        }
    }

    #[test]
    fn downsample_examples() {
        assert!(voxel_downsample(&[], 1.0).is_empty());
        let out = voxel_downsample(&[Point3::new(0.2, 0.0, 0.0), Point3::new(0.4, 0.0, 0.0)], 1.0);
        assert_eq!(out.len(), 1);
        assert!((out[0] - Point3::new(0.3, 0.0, 0.0)).norm() < 1e-12);
        let spread: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64 * 2.5, 0.3, 0.3)).collect();
        let out = voxel_downsample(&spread, 1.0);
        assert_eq!(out.len(), spread.len());
        for (a, b) in out.iter().zip(&spread) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn prediction_examples() {
        let s = OdometryState::new(cfg(), Pose::identity(), None);
        assert_eq!(predict_initial_guess(&s), Pose::identity());

        let mut s = OdometryState::new(cfg(), Pose::identity(), None);
        s.push(Pose::identity());
        s.push(Pose::from_translation(1.0, 0.0, 0.0));
        let g = predict_initial_guess(&s);
        assert!((g.translation() - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);

        let mut s = OdometryState::new(cfg(), Pose::identity(), None);
        s.push(Pose::from_yaw(0.3));
        s.push(Pose::from_yaw(0.4));
        assert!((predict_initial_guess(&s).yaw() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn self_registration_recovers_identity() {
        let cloud = structured_cloud();
        let mut map = VoxelMap::from_config(&cfg());
        map.insert(cloud.iter().copied());
        let scan: Vec<Point3> = cloud.iter().step_by(3).copied().collect();
        let guess = Pose::from_translation(0.3, 0.0, 0.0);
        let (pose, diag) = register_scan(&map, &scan, &guess, &cfg());
        assert!(!diag.diverged);
        assert!(pose.translation().norm() < 1e-3, "{pose:?}");
        assert!(pose.rotation_angle() < 1e-3);
    }

    #[test]
    fn out_of_gate_diverges() {
        let cloud = structured_cloud();
        let mut map = VoxelMap::from_config(&cfg());
        map.insert(cloud.iter().copied());
        let guess = Pose::from_translation(50.0, 50.0, 50.0);
        let (pose, diag) = register_scan(&map, &cloud, &guess, &cfg());
        assert!(diag.diverged);
        assert_eq!(diag.inliers, 0);
        assert_eq!(pose, guess);
    }

    #[test]
    fn plane_only_constrains_its_normal() {
        let plane = grid_plane(0.0, 0.1, 5.0);
        let mut map = VoxelMap::from_config(&cfg());
        map.insert(plane.iter().copied());
        let scan: Vec<Point3> = grid_plane(0.0, 0.1, 3.0)
            .into_iter()
            .map(|p| Point3::new(p.x + 0.5, p.y, p.z))
            .collect();
        let guess = Pose::from_translation(0.0, 0.0, 0.3);
        let (pose, diag) = register_scan(&map, &scan, &guess, &cfg());
        assert!(!diag.diverged);
        assert!(pose.translation().z.abs() < 1e-3, "{pose:?}");
    }

    #[test]
    fn gate_monotonicity() {
        let cloud = structured_cloud();
        let mut map = VoxelMap::from_config(&cfg());
        map.insert(cloud.iter().copied());
        let pose = Pose::from_xyz_yaw(0.4, -0.2, 0.1, 0.05);
        let mut last = usize::MAX;
        for gate in [1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05] {
            let n = count_inliers(&map, &cloud, &pose, gate);
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn radially_moved_wall_biases_pose() {
        // map: wall 10 m ahead; scan: the same wall, moved one gate farther away
        let gate = 1.0;
        let wall = |x: f64| -> Vec<Point3> {
            let mut v = Vec::new();
            for i in -50..=50 {
                for k in -10..=10 {
                    v.push(Point3::new(x, i as f64 * 0.1, k as f64 * 0.1));
                }
            }
            v
        };
        let mut map = VoxelMap::from_config(&cfg());
        map.insert(wall(10.0));
        let (pose, diag) = register_scan(&map, &wall(10.0 + 0.999 * gate), &Pose::identity(), &cfg());
        assert!(!diag.diverged);
        let wall_motion = Vec3::new(1.0, 0.0, 0.0);
        // estimated sensor moves against the wall's motion
        assert!(pose.translation().dot(&(-wall_motion)) > 0.9 * gate);
    }

    #[test]
    fn map_update_examples() {
        let c = IcpConfig {
            map_max_points_per_voxel: 1,
            ..IcpConfig::default()
        };
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64 * 0.37, 0.1, 0.2)).collect();
        let mut map = VoxelMap::from_config(&c);
        update_map(&mut map, &pts, &Pose::identity());
        let n = map.len();
        assert!(n <= pts.len());
        update_map(&mut map, &pts, &Pose::identity());
        assert_eq!(map.len(), n);

        let mut a = VoxelMap::from_config(&c);
        let mut b = VoxelMap::from_config(&c);
        update_map(&mut a, &pts, &Pose::identity());
        update_map(&mut b, &pts, &Pose::from_translation(100.0, 0.0, 0.0));
        assert!(a.voxel_keys().all(|k| !b.voxel_keys().any(|k2| k2 == k)));
    }

    #[test]
    fn all_no_return_follows_prediction() {
        let spec = Arc::new(LidarSpec::default());
        let scans: Vec<RangeScan> = (0..10).map(|i| RangeScan::empty(spec.clone(), i as f64 * 0.1)).collect();
        let motion = Pose::from_translation(0.5, 0.0, 0.0);
        let run = run_odometry(&scans, &IcpConfig::default(), Pose::identity(), Some(motion)).unwrap();
        for (i, p) in run.poses.iter().enumerate() {
            assert!((p.translation().x - 0.5 * i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn clean_feature_rich_short_run() {
        let spec = Arc::new(LidarSpec::uniform(16, -15f64.to_radians(), 15f64.to_radians(), 0.4f64.to_radians(), 100.0, 0.1));
        let world = fixtures::feature_rich();
        let gt = sample_trajectory(&[Point3::new(0.0, 0.0, 2.0), Point3::new(15.0, 0.0, 2.0)], 5.0, &spec).unwrap();
        let scans: Vec<RangeScan> = gt
            .poses
            .iter()
            .zip(&gt.timestamps)
            .map(|(p, t)| raycast_scan(&world, p, &spec, *t))
            .collect();
        let prior = gt.poses[0].between(&gt.poses[1]);
        let run = run_odometry(&scans, &IcpConfig::default(), gt.poses[0], Some(prior)).unwrap();
        let again = run_odometry(&scans, &IcpConfig::default(), gt.poses[0], Some(prior)).unwrap();
        assert_eq!(run.poses, again.poses);
        for (est, truth) in run.poses.iter().zip(&gt.poses) {
            let e = (est.translation() - truth.translation()).norm();
            assert!(e < 0.05);
        }
    }
}
