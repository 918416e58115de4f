//! Synthetic worlds, ground-truth trajectories, raycast range images and
//! noisy dead-reckoning increments.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{beam_direction, BeamRange, Point3, Pose, Vec3};

/// Rotating multi-channel LiDAR description.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarSpec {
    pub elevation_angles: Vec<f64>,
    pub azimuth_step: f64,
    pub max_range: f64,
    pub frame_interval: f64,
}

impl Default for LidarSpec {
    /// 16 channels over ±15°, 0.2° azimuth step, 100 m range, 10 Hz.
    fn default() -> Self {
        Self::uniform(16, -15f64.to_radians(), 15f64.to_radians(), 0.2f64.to_radians(), 100.0, 0.1)
    }
}

impl LidarSpec {
    /// Channels evenly spaced between `elevation_min` and `elevation_max` (inclusive).
    pub fn uniform(
        channels: usize,
        elevation_min: f64,
        elevation_max: f64,
        azimuth_step: f64,
        max_range: f64,
        frame_interval: f64,
    ) -> Self {
        let elevation_angles = if channels <= 1 {
            vec![0.5 * (elevation_min + elevation_max); channels]
        } else {
            (0..channels)
                .map(|c| {
                    elevation_min + (elevation_max - elevation_min) * c as f64 / (channels - 1) as f64
                })
                .collect()
        };
        Self {
            elevation_angles,
            azimuth_step,
            max_range,
            frame_interval,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.elevation_angles.len()
    }

    pub fn azimuth_bins(&self) -> usize {
        (TAU / self.azimuth_step).round() as usize
    }

    /// Azimuth of bin `j`; bin 0 sits at −π.
    pub fn azimuth(&self, j: usize) -> f64 {
        -PI + j as f64 * self.azimuth_step
    }

    /// Nearest bin for an azimuth in radians (any wrap).
    pub fn azimuth_bin(&self, azimuth: f64) -> usize {
        let n = self.azimuth_bins();
        let j = ((azimuth + PI) / self.azimuth_step).round() as i64;
        j.rem_euclid(n as i64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLidarSpec(m));
        if self.elevation_angles.is_empty() {
            return bad("channel_count must be >= 1".into());
        }
        if self.elevation_angles.iter().any(|e| !e.is_finite() || e.abs() >= PI / 2.0) {
            return bad("elevation angles must lie in (-90°, 90°)".into());
        }
        if !(self.azimuth_step > 0.0) || self.azimuth_step > TAU {
            return bad(format!("azimuth_step {} must be in (0, 2π]", self.azimuth_step));
        }
        let bins = TAU / self.azimuth_step;
        if (bins - bins.round()).abs() * self.azimuth_step > 1e-9 {
            return bad(format!("azimuth_step {} does not divide 2π", self.azimuth_step));
        }
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive".into());
        }
        if !(self.frame_interval > 0.0) {
            return bad("frame_interval must be positive".into());
        }
        Ok(())
    }
}

/// A world surface. Rectangles are given by a center and two orthogonal
/// half-edge vectors; boxes are axis aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    Rect {
        center: [f64; 3],
        half_u: [f64; 3],
        half_v: [f64; 3],
    },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Surface {
    pub fn rect(center: [f64; 3], half_u: [f64; 3], half_v: [f64; 3]) -> Self {
        Surface::Rect { center, half_u, half_v }
    }

    pub fn aabb(min: [f64; 3], max: [f64; 3]) -> Self {
        Surface::Box { min, max }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Surface::Rect { half_u, half_v, .. } => {
                let u = Vec3::from(*half_u);
                let v = Vec3::from(*half_v);
                if !(u.cross(&v).norm() > 0.0) {
                    return Err(Error::InvalidWorld("rectangle with zero area".into()));
                }
                if u.dot(&v).abs() > 1e-9 * u.norm() * v.norm() {
                    return Err(Error::InvalidWorld("rectangle edges must be orthogonal".into()));
                }
            }
            Surface::Box { min, max } => {
                if (0..3).any(|i| !(max[i] > min[i])) {
                    return Err(Error::InvalidWorld("box with non-positive extent".into()));
                }
            }
        }
        Ok(())
    }
}

/// Precomputed ray-test form of a surface.
#[derive(Clone, Debug)]
enum Shape {
    Rect {
        center: Vec3,
        normal: Vec3,
        u_dir: Vec3,
        u_half: f64,
        v_dir: Vec3,
        v_half: f64,
    },
    Box { min: Vec3, max: Vec3 },
}

impl Shape {
    fn from_surface(s: &Surface) -> Self {
        match s {
            Surface::Rect { center, half_u, half_v } => {
                let u = Vec3::from(*half_u);
                let v = Vec3::from(*half_v);
                Shape::Rect {
                    center: Vec3::from(*center),
                    normal: u.cross(&v).normalize(),
                    u_dir: u.normalize(),
                    u_half: u.norm(),
                    v_dir: v.normalize(),
                    v_half: v.norm(),
                }
            }
            Surface::Box { min, max } => Shape::Box {
                min: Vec3::from(*min),
                max: Vec3::from(*max),
            },
        }
    }

    /// Distance along a unit ray to the first hit, if any.
    fn intersect(&self, origin: &Vec3, dir: &Vec3, inv_dir: &Vec3) -> Option<f64> {
        match self {
            Shape::Rect { center, normal, u_dir, u_half, v_dir, v_half } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let local = origin + dir * t - center;
                (local.dot(u_dir).abs() <= *u_half && local.dot(v_dir).abs() <= *v_half).then_some(t)
            }
            Shape::Box { min, max } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[i] - origin[i]) * inv_dir[i];
                    let b = (max[i] - origin[i]) * inv_dir[i];
                    t_enter = t_enter.max(a.min(b));
                    t_exit = t_exit.min(a.max(b));
                }
                if t_exit < t_enter || t_exit <= 0.0 {
                    None
                } else if t_enter > 0.0 {
                    Some(t_enter)
                } else {
                    Some(t_exit)
                }
            }
        }
    }
}

/// Immutable collection of surfaces in the world frame.
#[derive(Clone, Debug)]
pub struct World {
    name: String,
    surfaces: Vec<Surface>,
    shapes: Vec<Shape>,
}

impl World {
    pub fn new(name: impl Into<String>, surfaces: Vec<Surface>) -> Result<Self> {
        for s in &surfaces {
            s.validate()?;
        }
        let shapes = surfaces.iter().map(Shape::from_surface).collect();
        Ok(Self {
            name: name.into(),
            surfaces,
            shapes,
        })
    }

    pub fn empty() -> Self {
        Self {
            name: "empty".into(),
            surfaces: Vec::new(),
            shapes: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.surfaces
    }

    pub fn with_surface(mut self, s: Surface) -> Result<Self> {
        s.validate()?;
        self.shapes.push(Shape::from_surface(&s));
        self.surfaces.push(s);
        Ok(self)
    }

    /// Nearest hit distance along a unit ray from `origin`.
    pub fn cast_ray(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        self.shapes
            .iter()
            .filter_map(|s| s.intersect(origin, dir, &inv))
            .min_by(f64::total_cmp)
    }
}

/// Range image: channel-major grid of beam ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeScan {
    pub timestamp: f64,
    spec: Arc<LidarSpec>,
    ranges: Vec<BeamRange>,
}

impl RangeScan {
    pub fn empty(spec: Arc<LidarSpec>, timestamp: f64) -> Self {
        let n = spec.channel_count() * spec.azimuth_bins();
        Self {
            timestamp,
            spec,
            ranges: vec![BeamRange::NoReturn; n],
        }
    }

    pub fn spec(&self) -> &Arc<LidarSpec> {
        &self.spec
    }

    pub fn ranges(&self) -> &[BeamRange] {
        &self.ranges
    }

    fn index(&self, channel: usize, bin: usize) -> usize {
        channel * self.spec.azimuth_bins() + bin
    }

    pub fn get(&self, channel: usize, bin: usize) -> BeamRange {
        self.ranges[self.index(channel, bin)]
    }

    /// Stores a range; returns beyond `max_range` (or non-finite) become no-return.
    pub fn set(&mut self, channel: usize, bin: usize, range: BeamRange) {
        let i = self.index(channel, bin);
        self.ranges[i] = match range {
            BeamRange::Return(r) if r.is_finite() && r >= 0.0 && r <= self.spec.max_range => range,
            _ => BeamRange::NoReturn,
        };
    }

    pub fn return_count(&self) -> usize {
        self.ranges.iter().filter(|r| r.is_return()).count()
    }

    /// Sensor-frame Cartesian points for every return.
    pub fn points(&self) -> Vec<Point3> {
        let bins = self.spec.azimuth_bins();
        let trig: Vec<(f64, f64)> = (0..bins).map(|j| self.spec.azimuth(j).sin_cos()).collect();
        let mut out = Vec::with_capacity(self.return_count());
        for (c, el) in self.spec.elevation_angles.iter().enumerate() {
            let (se, ce) = el.sin_cos();
            for (j, (sa, ca)) in trig.iter().enumerate() {
                if let BeamRange::Return(r) = self.ranges[c * bins + j] {
                    out.push(Point3::new(r * ce * ca, r * ce * sa, r * se));
                }
            }
        }
        out
    }
}

/// Ground-truth world poses sampled at a uniform frame interval.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
    pub frame_interval: f64,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Ground-truth pose nearest to time `t`.
    pub fn pose_at(&self, t: f64) -> Option<&Pose> {
        if self.poses.is_empty() {
            return None;
        }
        let t0 = self.timestamps[0];
        let i = ((t - t0) / self.frame_interval).round().clamp(0.0, (self.len() - 1) as f64) as usize;
        self.poses.get(i)
    }
}

/// Piecewise-linear constant-speed path with yaw aligned to the current segment.
pub fn sample_trajectory(waypoints: &[Point3], speed: f64, spec: &LidarSpec) -> Result<GroundTruth> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidTrajectory("need at least 2 waypoints".into()));
    }
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::InvalidTrajectory(format!("speed {speed} must be positive")));
    }
    spec.validate()?;
    let mut cumulative = vec![0.0];
    for (i, w) in waypoints.windows(2).enumerate() {
        let len = (w[1] - w[0]).norm();
        if len < 1e-9 {
            return Err(Error::InvalidTrajectory(format!(
                "waypoints {} and {} coincide",
                i,
                i + 1
            )));
        }
        cumulative.push(cumulative[i] + len);
    }
    let total = *cumulative.last().unwrap();
    let dt = spec.frame_interval;
    let step = speed * dt;
    let n = (total / step + 1e-9).floor() as usize + 1;

    let mut poses = Vec::with_capacity(n);
    let mut timestamps = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = (i as f64 * step).min(total);
        // a frame landing on a corner takes the outgoing heading
        while seg + 1 < waypoints.len() - 1 && s >= cumulative[seg + 1] - 1e-9 {
            seg += 1;
        }
        let a = waypoints[seg];
        let b = waypoints[seg + 1];
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let frac = ((s - cumulative[seg]) / seg_len).clamp(0.0, 1.0);
        let pos = a + (b - a) * frac;
        let dir = b - a;
        let yaw = dir.y.atan2(dir.x);
        let pitch = -(dir.z).atan2(dir.x.hypot(dir.y));
        let rot = nalgebra::UnitQuaternion::from_euler_angles(0.0, pitch, yaw);
        poses.push(Pose::new(rot, pos.coords));
        timestamps.push(i as f64 * dt);
    }
    Ok(GroundTruth {
        timestamps,
        poses,
        frame_interval: dt,
    })
}

/// Casts every beam of `spec` from `sensor_pose` into `world`.
pub fn raycast_scan(world: &World, sensor_pose: &Pose, spec: &Arc<LidarSpec>, timestamp: f64) -> RangeScan {
    let mut scan = RangeScan::empty(spec.clone(), timestamp);
    let bins = spec.azimuth_bins();
    let origin = *sensor_pose.translation();
    for (c, &el) in spec.elevation_angles.iter().enumerate() {
        for j in 0..bins {
            let dir = sensor_pose.transform_vector(&beam_direction(spec.azimuth(j), el));
            if let Some(r) = world.cast_ray(&origin, &dir) {
                if r <= spec.max_range {
                    scan.ranges[c * bins + j] = BeamRange::Return(r);
                }
            }
        }
    }
    scan
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadReckoningNoise {
    /// Per-axis translation sigma, meters per frame.
    pub translation_sigma: f64,
    /// Yaw sigma, radians per frame.
    pub yaw_sigma: f64,
}

impl Default for DeadReckoningNoise {
    fn default() -> Self {
        Self {
            translation_sigma: 0.01,
            yaw_sigma: 0.001,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeadReckoningStream {
    /// Body-frame increment from frame i to frame i+1.
    pub relative_poses: Vec<Pose>,
    pub noise: DeadReckoningNoise,
    pub seed: u64,
}

pub fn synth_dead_reckoning(gt: &GroundTruth, noise: DeadReckoningNoise, seed: u64) -> Result<DeadReckoningStream> {
    if gt.len() < 2 {
        return Err(Error::InvalidTrajectory("dead reckoning needs at least 2 poses".into()));
    }
    if !(noise.translation_sigma >= 0.0) || !(noise.yaw_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise sigmas must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_noise = Normal::new(0.0, noise.translation_sigma).expect("finite sigma");
    let yaw_noise = Normal::new(0.0, noise.yaw_sigma).expect("finite sigma");
    let relative_poses = gt
        .poses
        .windows(2)
        .map(|w| {
            let rel = w[0].between(&w[1]);
            if noise.translation_sigma == 0.0 && noise.yaw_sigma == 0.0 {
                return rel;
            }
            let dt = Vec3::new(t_noise.sample(&mut rng), t_noise.sample(&mut rng), t_noise.sample(&mut rng));
            let dyaw = yaw_noise.sample(&mut rng);
            Pose::new(
                rel.rotation() * nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, dyaw),
                rel.translation() + dt,
            )
        })
        .collect();
    Ok(DeadReckoningStream {
        relative_poses,
        noise,
        seed,
    })
}

/// Canonical fixture worlds laid out around a course running along +x from
/// the origin. They have no floor: a flat floor sampled by sensor-fixed rings
/// looks identical from frame to frame and drags point-to-point registration
/// toward zero motion.
pub mod fixtures {
    use super::*;

    /// Corridor with side walls, two rows of pillars, crates and end walls.
    pub fn feature_rich() -> World {
        let mut s = vec![
            Surface::rect([50.0, 8.0, 2.0], [70.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([50.0, -8.0, 2.0], [70.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([-20.0, 0.0, 2.0], [0.0, 8.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([120.0, 0.0, 2.0], [0.0, 8.0, 0.0], [0.0, 0.0, 2.0]),
        ];
        for k in 0..14 {
            let x = -15.0 + 10.0 * k as f64;
            s.push(Surface::aabb([x - 0.3, 4.2, 0.0], [x + 0.3, 4.8, 4.0]));
            let x = x + 5.0;
            s.push(Surface::aabb([x - 0.3, -4.8, 0.0], [x + 0.3, -4.2, 4.0]));
        }
        let crates = [
            (7.0, 6.5, 1.0),
            (23.0, -6.5, 1.4),
            (41.0, 6.3, 0.8),
            (58.0, -6.4, 1.2),
            (76.0, 6.6, 1.5),
            (93.0, -6.5, 1.0),
            (112.0, 6.4, 1.3),
            (-8.0, -6.6, 0.9),
        ];
        for (x, y, h) in crates {
            s.push(Surface::aabb([x - 0.6, y - 0.6, 0.0], [x + 0.6, y + 0.6, h]));
        }
        World::new("feature_rich", s).expect("fixture surfaces are valid")
    }

    /// Wide hall with distant walls and a few thin poles.
    pub fn sparse() -> World {
        let mut s = vec![
            Surface::rect([50.0, 20.0, 2.0], [90.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([50.0, -20.0, 2.0], [90.0, 0.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([-40.0, 0.0, 2.0], [0.0, 20.0, 0.0], [0.0, 0.0, 2.0]),
            Surface::rect([140.0, 0.0, 2.0], [0.0, 20.0, 0.0], [0.0, 0.0, 2.0]),
        ];
        for (x, y) in [(-10.0, 12.0), (15.0, -12.0), (40.0, 12.0), (65.0, -12.0), (90.0, 12.0), (115.0, -12.0)] {
            s.push(Surface::aabb([x - 0.15, y - 0.15, 0.0], [x + 0.15, y + 0.15, 4.0]));
        }
        World::new("sparse", s).expect("fixture surfaces are valid")
    }

    pub fn by_name(name: &str) -> Option<World> {
        match name {
            "feature_rich" => Some(feature_rich()),
            "sparse" => Some(sparse()),
            "empty" => Some(World::empty()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn flat_spec(step_deg: f64) -> Arc<LidarSpec> {
        Arc::new(LidarSpec {
            elevation_angles: vec![-0.1, 0.0, 0.1],
            azimuth_step: step_deg.to_radians(),
            max_range: 100.0,
            frame_interval: 0.1,
        })
    }

    fn room(half: f64) -> World {
        World::new(
            "room",
            vec![
                Surface::rect([half, 0.0, 0.0], [0.0, half, 0.0], [0.0, 0.0, 10.0]),
                Surface::rect([-half, 0.0, 0.0], [0.0, half, 0.0], [0.0, 0.0, 10.0]),
                Surface::rect([0.0, half, 0.0], [half, 0.0, 0.0], [0.0, 0.0, 10.0]),
                Surface::rect([0.0, -half, 0.0], [half, 0.0, 0.0], [0.0, 0.0, 10.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn default_spec_is_valid() {
        let s = LidarSpec::default();
        s.validate().unwrap();
        assert_eq!(s.channel_count(), 16);
        assert_eq!(s.azimuth_bins(), 1800);
        assert!((s.azimuth(900)).abs() < 1e-12);
    }

    #[test]
    fn spec_rejects_bad_step() {
        let mut s = LidarSpec::default();
        s.azimuth_step = 0.3f64.to_radians() * 1.0001;
        assert!(s.validate().is_err());
        s.azimuth_step = 0.2f64.to_radians();
        s.max_range = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn straight_trajectory() {
        let spec = LidarSpec::default();
        let gt = sample_trajectory(&[Point3::origin(), Point3::new(10.0, 0.0, 0.0)], 1.0, &spec).unwrap();
        assert_eq!(gt.len(), 101);
        assert!((gt.poses[50].translation() - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-9);
        assert!(gt.poses[0].rotation_angle() < 1e-12);
        assert!(gt.poses[37].rotation_angle() < 1e-12);
        assert!((gt.timestamps[100] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn l_shaped_heading_matches_finite_differences() {
        let spec = LidarSpec::default();
        let wps = [Point3::origin(), Point3::new(10.0, 0.0, 0.0), Point3::new(10.0, 10.0, 0.0)];
        let gt = sample_trajectory(&wps, 1.0, &spec).unwrap();
        assert_eq!(gt.len(), 201);
        // heading oracle: forward difference of positions
        for i in 0..gt.len() - 1 {
            let d = gt.poses[i + 1].translation() - gt.poses[i].translation();
            let fd_yaw = d.y.atan2(d.x);
            assert!((gt.poses[i].yaw() - fd_yaw).abs() < 1e-9, "frame {i}");
        }
        assert!(gt.poses[99].yaw().abs() < 1e-9);
        assert!((gt.poses[100].yaw() - FRAC_PI_2).abs() < 1e-9);
        assert!((gt.poses[100].translation() - Vec3::new(10.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn trajectory_errors() {
        let spec = LidarSpec::default();
        let p = Point3::new(1.0, 2.0, 0.0);
        assert!(sample_trajectory(&[p], 1.0, &spec).is_err());
        assert!(sample_trajectory(&[p, p], 1.0, &spec).is_err());
        assert!(sample_trajectory(&[p, Point3::origin()], 0.0, &spec).is_err());
    }

    #[test]
    fn raycast_wall_and_empty() {
        let spec = flat_spec(1.0);
        let wall = World::new("wall", vec![Surface::rect([20.0, 0.0, 0.0], [0.0, 50.0, 0.0], [0.0, 0.0, 50.0])]).unwrap();
        let scan = raycast_scan(&wall, &Pose::identity(), &spec, 0.0);
        let j0 = spec.azimuth_bin(0.0);
        assert!((scan.get(1, j0).value().unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(scan.get(1, spec.azimuth_bin(PI - 0.01)), BeamRange::NoReturn);

        let empty = raycast_scan(&World::empty(), &Pose::identity(), &spec, 0.0);
        assert_eq!(empty.return_count(), 0);
    }

    #[test]
    fn raycast_square_room_closed_form() {
        let spec = flat_spec(1.0);
        let scan = raycast_scan(&room(5.0), &Pose::identity(), &spec, 0.0);
        // oracle: ray (cos a, sin a) meets x = 5 at 5 / cos a
        for deg in [0.0f64, 10.0, 30.0, 45.0] {
            let a = deg.to_radians();
            let expect = 5.0 / a.cos();
            let got = scan.get(1, spec.azimuth_bin(a)).value().unwrap();
            assert!((got - expect).abs() < 1e-9, "{deg}: {got} vs {expect}");
        }
        let diag = scan.get(1, spec.azimuth_bin(FRAC_PI_4)).value().unwrap();
        assert!((diag - 5.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn raycast_respects_max_range() {
        let mut spec = (*flat_spec(1.0)).clone();
        spec.max_range = 30.0;
        let spec = Arc::new(spec);
        let near = World::new("w", vec![Surface::rect([25.0, 0.0, 0.0], [0.0, 50.0, 0.0], [0.0, 0.0, 50.0])]).unwrap();
        let far = World::new("w", vec![Surface::rect([35.0, 0.0, 0.0], [0.0, 50.0, 0.0], [0.0, 0.0, 50.0])]).unwrap();
        let j0 = spec.azimuth_bin(0.0);
        assert!(raycast_scan(&near, &Pose::identity(), &spec, 0.0).get(1, j0).is_return());
        let s = raycast_scan(&far, &Pose::identity(), &spec, 0.0);
        assert_eq!(s.return_count(), 0);
    }

    #[test]
    fn raycast_occlusion_is_monotone() {
        let spec = flat_spec(2.0);
        let pose = Pose::from_xyz_yaw(3.0, -1.0, 1.0, 0.3);
        let base = fixtures::feature_rich();
        let before = raycast_scan(&base, &pose, &spec, 0.0);
        let more = base.with_surface(Surface::aabb([6.0, -3.0, 0.0], [7.0, 2.0, 3.0])).unwrap();
        let after = raycast_scan(&more, &pose, &spec, 0.0);
        for (a, b) in before.ranges().iter().zip(after.ranges()) {
            match (a, b) {
                (BeamRange::Return(x), BeamRange::Return(y)) => assert!(y <= x),
                (BeamRange::Return(_), BeamRange::NoReturn) => panic!("occluder removed a return"),
                _ => {}
            }
        }
    }

    #[test]
    fn box_hit_from_outside_and_inside() {
        let w = World::new("b", vec![Surface::aabb([2.0, -1.0, -1.0], [4.0, 1.0, 1.0])]).unwrap();
        let d = Vec3::new(1.0, 0.0, 0.0);
        assert!((w.cast_ray(&Vec3::zeros(), &d).unwrap() - 2.0).abs() < 1e-12);
        assert!((w.cast_ray(&Vec3::new(3.0, 0.0, 0.0), &d).unwrap() - 1.0).abs() < 1e-12);
        assert!(w.cast_ray(&Vec3::new(5.0, 0.0, 0.0), &d).is_none());
    }

    #[test]
    fn invalid_surfaces_rejected() {
        assert!(World::new("x", vec![Surface::rect([0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0])]).is_err());
        assert!(World::new("x", vec![Surface::aabb([0.0; 3], [1.0, 0.0, 1.0])]).is_err());
    }

    fn straight_gt(frames: usize) -> GroundTruth {
        let spec = LidarSpec::default();
        let len = (frames - 1) as f64 * 0.1;
        sample_trajectory(&[Point3::origin(), Point3::new(len, 0.0, 0.0)], 1.0, &spec).unwrap()
    }

    #[test]
    fn zero_noise_dead_reckoning_is_exact() {
        let spec = LidarSpec::default();
        let wps = [Point3::origin(), Point3::new(10.0, 0.0, 0.0), Point3::new(10.0, 10.0, 0.0)];
        let gt = sample_trajectory(&wps, 2.0, &spec).unwrap();
        let noise = DeadReckoningNoise { translation_sigma: 0.0, yaw_sigma: 0.0 };
        let dr = synth_dead_reckoning(&gt, noise, 7).unwrap();
        assert_eq!(dr.relative_poses.len(), gt.len() - 1);
        let mut pose = gt.poses[0];
        for (i, inc) in dr.relative_poses.iter().enumerate() {
            assert_eq!(*inc, gt.poses[i].between(&gt.poses[i + 1]));
            pose = pose.compose(inc);
            let err = pose.between(&gt.poses[i + 1]);
            assert!(err.translation().norm() < 1e-9 && err.rotation_angle() < 1e-9);
        }
    }

    #[test]
    fn dead_reckoning_is_seeded() {
        let gt = straight_gt(50);
        let a = synth_dead_reckoning(&gt, DeadReckoningNoise::default(), 11).unwrap();
        let b = synth_dead_reckoning(&gt, DeadReckoningNoise::default(), 11).unwrap();
        let c = synth_dead_reckoning(&gt, DeadReckoningNoise::default(), 12).unwrap();
        assert_eq!(a.relative_poses, b.relative_poses);
        assert_ne!(a.relative_poses, c.relative_poses);
    }

    #[test]
    fn dead_reckoning_drift_matches_random_walk() {
        let gt = straight_gt(1001);
        let noise = DeadReckoningNoise { translation_sigma: 0.01, yaw_sigma: 0.0 };
        // oracle: independent sum of N(0, σ²) per axis over 1000 steps
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let oracle: f64 = (0..100)
            .map(|_| {
                let mut s = Vec3::zeros();
                for _ in 0..1000 {
                    s += Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                }
                s.norm()
            })
            .sum::<f64>()
            / 100.0;
        let mean: f64 = (0..100u64)
            .map(|seed| {
                let dr = synth_dead_reckoning(&gt, noise, seed).unwrap();
                let end = dr.relative_poses.iter().fold(gt.poses[0], |p, inc| p.compose(inc));
                (end.translation() - gt.poses[1000].translation()).norm()
            })
            .sum::<f64>()
            / 100.0;
        assert!((0.1..=1.0).contains(&oracle), "oracle {oracle}");
        assert!((0.1..=1.0).contains(&mean), "mean drift {mean}");
        assert!((mean - oracle).abs() < 0.15, "{mean} vs {oracle}");
    }

    #[test]
    fn fixtures_build() {
        assert!(fixtures::feature_rich().surfaces().len() >= 8 + 3);
        assert_eq!(fixtures::sparse().surfaces().len(), 10);
        assert!(fixtures::by_name("nope").is_none());
    }
}
