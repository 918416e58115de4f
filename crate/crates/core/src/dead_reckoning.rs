//! Integration of dead-reckoning increments and windowed velocity estimates.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::world::DeadReckoningStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityEstimate {
    /// World-frame linear velocity, m/s.
    pub linear_velocity: Vec3,
    /// Yaw rate over the same window, rad/s.
    pub yaw_rate: f64,
    pub valid: bool,
}

impl VelocityEstimate {
    pub fn invalid() -> Self {
        Self {
            linear_velocity: Vec3::zeros(),
            yaw_rate: 0.0,
            valid: false,
        }
    }
}

/// Chains body-frame increments onto `initial`. The result has one more
/// pose than there are increments and starts with `initial`.
pub fn integrate(stream: &DeadReckoningStream, initial: Pose) -> Result<Vec<Pose>> {
    if stream.relative_poses.is_empty() {
        return Err(Error::Empty("dead-reckoning stream"));
    }
    Ok(integrate_increments(&stream.relative_poses, initial))
}

pub fn integrate_increments(increments: &[Pose], initial: Pose) -> Vec<Pose> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(initial);
    let mut pose = initial;
    for inc in increments {
        pose = pose.compose(inc);
        out.push(pose);
    }
    out
}

const TIME_EPS: f64 = 1e-6;

fn nearest_index(timestamps: &[f64], t: f64) -> usize {
    let i = timestamps.partition_point(|&x| x < t);
    if i == 0 {
        0
    } else if i == timestamps.len() {
        i - 1
    } else if (timestamps[i] - t).abs() < (t - timestamps[i - 1]).abs() {
        i
    } else {
        i - 1
    }
}

/// `(position(t) − position(t − window)) / window` on a time-indexed trajectory.
pub fn windowed_velocity(timestamps: &[f64], poses: &[Pose], t: f64, window: f64) -> Result<VelocityEstimate> {
    if !(window > 0.0) {
        return Err(Error::InvalidArgument(format!("window {window} must be positive")));
    }
    if timestamps.len() != poses.len() {
        return Err(Error::LengthMismatch(timestamps.len(), poses.len()));
    }
    if timestamps.is_empty() || t - window < timestamps[0] - TIME_EPS || t > timestamps[timestamps.len() - 1] + TIME_EPS {
        return Ok(VelocityEstimate::invalid());
    }
    let i = nearest_index(timestamps, t);
    let j = nearest_index(timestamps, t - window);
    Ok(velocity_between(timestamps[j], &poses[j], timestamps[i], &poses[i]))
}

fn velocity_between(t0: f64, p0: &Pose, t1: f64, p1: &Pose) -> VelocityEstimate {
    let span = t1 - t0;
    if span <= 0.0 {
        return VelocityEstimate::invalid();
    }
    VelocityEstimate {
        linear_velocity: (p1.translation() - p0.translation()) / span,
        yaw_rate: wrap_angle(p1.yaw() - p0.yaw()) / span,
        valid: true,
    }
}

/// Streaming form of [`windowed_velocity`] for frame-by-frame consumers.
#[derive(Clone, Debug)]
pub struct VelocityWindow {
    window: f64,
    samples: VecDeque<(f64, Pose)>,
}

impl VelocityWindow {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            samples: VecDeque::new(),
        }
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn push(&mut self, t: f64, pose: Pose) {
        self.samples.push_back((t, pose));
        // keep exactly one sample at or before t − window
        while self.samples.len() > 2 && self.samples[1].0 <= t - self.window + TIME_EPS {
            self.samples.pop_front();
        }
    }

    pub fn estimate(&self) -> VelocityEstimate {
        let (Some(&(t0, p0)), Some(&(t1, p1))) = (self.samples.front(), self.samples.back()) else {
            return VelocityEstimate::invalid();
        };
        if t1 - t0 < self.window - TIME_EPS {
            return VelocityEstimate::invalid();
        }
        velocity_between(t0, &p0, t1, &p1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::world::{sample_trajectory, synth_dead_reckoning, DeadReckoningNoise, LidarSpec};
    use proptest::prelude::*;

    fn stream(incs: Vec<Pose>) -> DeadReckoningStream {
        DeadReckoningStream {
            relative_poses: incs,
            noise: DeadReckoningNoise::default(),
            seed: 0,
        }
    }

    #[test]
    fn integrate_examples() {
        let out = integrate(&stream(vec![Pose::identity(); 5]), Pose::from_translation(1.0, 2.0, 3.0)).unwrap();
        assert!(out.iter().all(|p| *p == Pose::from_translation(1.0, 2.0, 3.0)));
        let out = integrate(&stream(vec![Pose::from_translation(1.0, 0.0, 0.0); 7]), Pose::identity()).unwrap();
        assert!((out[7].translation() - Vec3::new(7.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(integrate(&stream(vec![]), Pose::identity()).is_err());
    }

    #[test]
    fn integrate_inverts_synthesis() {
        let spec = LidarSpec::default();
        let wps = [Point3::origin(), Point3::new(8.0, 0.0, 0.0), Point3::new(8.0, -6.0, 0.0)];
        let gt = sample_trajectory(&wps, 3.0, &spec).unwrap();
        let dr = synth_dead_reckoning(&gt, DeadReckoningNoise { translation_sigma: 0.0, yaw_sigma: 0.0 }, 1).unwrap();
        let traj = integrate(&dr, gt.poses[0]).unwrap();
        for (a, b) in traj.iter().zip(&gt.poses) {
            assert!((a.translation() - b.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn velocity_examples() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let still = vec![Pose::from_translation(4.0, 4.0, 0.0); 30];
        let v = windowed_velocity(&ts, &still, 2.0, 1.0).unwrap();
        assert!(v.valid && v.linear_velocity.norm() < 1e-12);

        let moving: Vec<Pose> = ts.iter().map(|t| Pose::from_translation(*t, 0.0, 0.0)).collect();
        for w in [0.1, 0.5, 1.0, 2.0] {
            let v = windowed_velocity(&ts, &moving, 2.5, w).unwrap();
            assert!(v.valid);
            assert!((v.linear_velocity - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        }
        assert!(!windowed_velocity(&ts, &moving, 0.5, 1.0).unwrap().valid);
        assert!(windowed_velocity(&ts, &moving, 0.5, 0.0).is_err());
    }

    #[test]
    fn streaming_window_matches_batch() {
        let ts: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let poses: Vec<Pose> = ts
            .iter()
            .map(|t| Pose::from_xyz_yaw(t * t, (3.0 * t).sin(), 0.0, 0.2 * t))
            .collect();
        let mut w = VelocityWindow::new(1.0);
        for (i, (t, p)) in ts.iter().zip(&poses).enumerate() {
            w.push(*t, *p);
            let batch = windowed_velocity(&ts, &poses, *t, 1.0).unwrap();
            let s = w.estimate();
            assert_eq!(s.valid, batch.valid, "frame {i}");
            if s.valid {
                assert!((s.linear_velocity - batch.linear_velocity).norm() < 1e-9);
                assert!((s.yaw_rate - 0.2).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn integration_is_group_composition(
            raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.2f64..0.2), 2..40),
            split in 1usize..39,
        ) {
            let incs: Vec<Pose> = raw.iter().map(|(x, y, yaw)| Pose::from_xyz_yaw(*x, *y, 0.0, *yaw)).collect();
            let split = split.min(incs.len() - 1);
            let whole = integrate_increments(&incs, Pose::identity());
            let first = integrate_increments(&incs[..split], Pose::identity());
            let second = integrate_increments(&incs[split..], *first.last().unwrap());
            let a = whole.last().unwrap();
            let b = second.last().unwrap();
            prop_assert!(a.between(b).translation().norm() < 1e-9);
            prop_assert!(a.between(b).rotation_angle() < 1e-9);
        }

        #[test]
        fn linear_velocity_window_invariant(vx in -5.0f64..5.0, vy in -5.0f64..5.0, w in 0.1f64..3.0) {
            let ts: Vec<f64> = (0..80).map(|i| i as f64 * 0.1).collect();
            let poses: Vec<Pose> = ts.iter().map(|t| Pose::from_translation(vx * t, vy * t, 0.0)).collect();
            let w = (w / 0.1).round() * 0.1;
            let v = windowed_velocity(&ts, &poses, 7.5, w).unwrap();
            prop_assert!(v.valid);
            prop_assert!((v.linear_velocity - Vec3::new(vx, vy, 0.0)).norm() < 1e-9);
        }
    }
}
