//! Point-cloud injection: static cylindrical walls, square-boundary corner and
//! plane shapes, and the radial sawtooth schedule bounded by the victim's
//! correspondence gate.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, BeamRange, Point3, Pose};
use crate::world::{LidarSpec, RangeScan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Cylinder,
    Corner,
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Cylinder, ShapeKind::Corner, ShapeKind::Plane];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Corner => "corner",
            ShapeKind::Plane => "plane",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder" => Ok(ShapeKind::Cylinder),
            "corner" => Ok(ShapeKind::Corner),
            "plane" => Ok(ShapeKind::Plane),
            other => Err(Error::InvalidAttack(format!("unknown shape '{other}'"))),
        }
    }
}

/// How the injected wall moves radially while the attack is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Sawtooth ramp from `d_min` to `d_max` every `t_cycle`.
    Oscillating,
    /// Wall held at `d_max` for the whole active interval.
    Static,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub spoofer_position: Point3,
    /// Full azimuthal width of the replaceable window, radians.
    pub window_width: f64,
    pub shape: ShapeKind,
    pub motion: Motion,
    pub d_min: f64,
    pub d_max: f64,
    /// Sawtooth period in seconds. Overwritten from the gate when `auto_cycle` is set.
    pub t_cycle: f64,
    pub auto_cycle: bool,
    pub active_start: f64,
    pub active_end: f64,
}

impl AttackConfig {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_start && t <= self.active_end
    }

    /// Sets `t_cycle` from the gate when `auto_cycle` is on.
    pub fn resolve_cycle(&mut self, frame_interval: f64, m_corr: f64) -> Result<()> {
        if self.auto_cycle {
            self.t_cycle = derive_cycle(self.d_min, self.d_max, m_corr, frame_interval)?;
        }
        Ok(())
    }

    /// Square-boundary scale of the current shape at boresight distance `d`.
    pub fn scale(&self, d: f64) -> f64 {
        match self.shape {
            ShapeKind::Plane => SQRT_2 * d,
            _ => d,
        }
    }

    pub fn schedule(&self, frame_interval: f64) -> SpoofSchedule {
        let per_frame_displacement = match self.motion {
            Motion::Static => 0.0,
            Motion::Oscillating => (self.d_max - self.d_min) * frame_interval / self.t_cycle,
        };
        SpoofSchedule {
            per_frame_displacement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidAttack(m));
        if !(self.d_min > 0.0) || !(self.d_max > self.d_min) {
            return bad(format!("need 0 < d_min < d_max (got {} / {})", self.d_min, self.d_max));
        }
        if !(self.window_width > 0.0 && self.window_width < TAU) {
            return bad(format!("window width {} rad outside (0, 2π)", self.window_width));
        }
        if self.motion == Motion::Oscillating && !(self.t_cycle > 0.0) {
            return bad(format!("t_cycle {} must be positive", self.t_cycle));
        }
        if !(self.active_end >= self.active_start) {
            return bad("active interval end precedes start".into());
        }
        if self.spoofer_position.iter().any(|v| !v.is_finite()) {
            return bad("spoofer position must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpoofSchedule {
    pub per_frame_displacement: f64,
}

/// Sawtooth period that moves the wall by exactly one gate per frame.
pub fn derive_cycle(d_min: f64, d_max: f64, m_corr: f64, dt: f64) -> Result<f64> {
    if !(d_min > 0.0) || !(d_max > d_min) {
        return Err(Error::InvalidAttack(format!("need 0 < d_min < d_max (got {d_min} / {d_max})")));
    }
    if !(m_corr > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidAttack("m_corr and dt must be positive".into()));
    }
    Ok((d_max - d_min) * dt / m_corr)
}

/// Boresight distance of the injected wall at time `t`, `None` while inactive.
pub fn injection_distance(t: f64, cfg: &AttackConfig) -> Option<f64> {
    if !cfg.is_active(t) {
        return None;
    }
    match cfg.motion {
        Motion::Static => Some(cfg.d_max),
        Motion::Oscillating => {
            let phase = (t - cfg.active_start) / cfg.t_cycle;
            let k = (phase + 1e-9).floor();
            let frac = (phase - k).clamp(0.0, 1.0);
            Some(cfg.d_min + (cfg.d_max - cfg.d_min) * frac)
        }
    }
}

/// Horizontal fake range at angle `theta_rel` from the boresight.
pub fn fake_range(theta_rel: f64, shape: ShapeKind, boresight_distance: f64) -> Result<f64> {
    if !(boresight_distance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "boresight distance {boresight_distance} must be positive"
        )));
    }
    if !(theta_rel.abs() <= PI) {
        return Err(Error::InvalidArgument(format!("relative angle {theta_rel} outside [-π, π]")));
    }
    let square = |theta: f64, s: f64| s / (theta.sin().abs() + theta.cos().abs());
    Ok(match shape {
        ShapeKind::Cylinder => boresight_distance,
        ShapeKind::Corner => square(theta_rel, boresight_distance),
        ShapeKind::Plane => square(theta_rel + FRAC_PI_4, SQRT_2 * boresight_distance),
    })
}

/// Azimuth of the spoofer as seen from `sensor_pose`, sensor frame.
pub fn spoofer_bearing(sensor_pose: &Pose, spoofer: &Point3) -> f64 {
    let local = sensor_pose.inverse().transform_point(spoofer);
    wrap_angle(local.y.atan2(local.x))
}

/// Replaces every beam inside the window around the spoofer bearing with the
/// fake wall. Inactive attacks return the clean scan unchanged.
pub fn tamper_scan(clean: &RangeScan, sensor_pose: &Pose, cfg: &AttackConfig, m_corr: f64) -> Result<RangeScan> {
    let spec = clean.spec().clone();
    let mut cfg_eff;
    let cfg = if cfg.auto_cycle {
        cfg_eff = cfg.clone();
        cfg_eff.resolve_cycle(spec.frame_interval, m_corr)?;
        &cfg_eff
    } else {
        cfg
    };
    let Some(distance) = injection_distance(clean.timestamp, cfg) else {
        return Ok(clean.clone());
    };
    let half = 0.5 * cfg.window_width;
    let bearing = spoofer_bearing(sensor_pose, &cfg.spoofer_position);
    let mut out = clean.clone();
    for j in 0..spec.azimuth_bins() {
        let rel = wrap_angle(spec.azimuth(j) - bearing);
        if rel.abs() >= half {
            continue;
        }
        let horizontal = fake_range(rel, cfg.shape, distance)?;
        for (c, el) in spec.elevation_angles.iter().enumerate() {
            let r = horizontal / el.cos();
            out.set(c, j, BeamRange::Return(r));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// The far end of the sweep lies beyond the sensor's measurable range.
    RangeLimit { d_max: f64, max_range: f64 },
    /// The wall moves farther per frame than the correspondence gate.
    GateExceeded { per_frame_displacement: f64, m_corr: f64 },
    InvalidParameter { message: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::RangeLimit { d_max, max_range } => write!(
                f,
                "range-limit violation: d_max {d_max} m exceeds sensor max range {max_range} m"
            ),
            Finding::GateExceeded { per_frame_displacement, m_corr } => write!(
                f,
                "correspondence-gate violation: per-frame displacement {per_frame_displacement:.6} m exceeds gate {m_corr} m"
            ),
            Finding::InvalidParameter { message } => write!(f, "invalid parameter: {message}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn range_limit_violated(&self) -> bool {
        self.findings.iter().any(|f| matches!(f, Finding::RangeLimit { .. }))
    }

    pub fn gate_violated(&self) -> bool {
        self.findings.iter().any(|f| matches!(f, Finding::GateExceeded { .. }))
    }
}

pub fn validate_schedule(cfg: &AttackConfig, spec: &LidarSpec, m_corr: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut cfg = cfg.clone();
    if let Err(e) = cfg.resolve_cycle(spec.frame_interval, m_corr).and_then(|_| cfg.validate()) {
        report.findings.push(Finding::InvalidParameter { message: e.to_string() });
    }
    if cfg.d_max > spec.max_range {
        report.findings.push(Finding::RangeLimit {
            d_max: cfg.d_max,
            max_range: spec.max_range,
        });
    }
    if cfg.motion == Motion::Oscillating && cfg.t_cycle > 0.0 {
        let per_frame = cfg.schedule(spec.frame_interval).per_frame_displacement;
        if per_frame > m_corr * (1.0 + 1e-9) {
            report.findings.push(Finding::GateExceeded {
                per_frame_displacement: per_frame,
                m_corr,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn osc(shape: ShapeKind, window_deg: f64) -> AttackConfig {
        AttackConfig {
            spoofer_position: Point3::new(30.0, 0.0, 0.0),
            window_width: window_deg.to_radians(),
            shape,
            motion: Motion::Oscillating,
            d_min: 1.0,
            d_max: 50.0,
            t_cycle: 4.9,
            auto_cycle: false,
            active_start: 2.0,
            active_end: 100.0,
        }
    }

    fn flat_spec() -> Arc<LidarSpec> {
        Arc::new(LidarSpec {
            elevation_angles: vec![-0.2, 0.0, 0.2],
            azimuth_step: 0.5f64.to_radians(),
            max_range: 100.0,
            frame_interval: 0.1,
        })
    }

    fn filled_scan(spec: &Arc<LidarSpec>, t: f64) -> RangeScan {
        let mut s = RangeScan::empty(spec.clone(), t);
        for c in 0..spec.channel_count() {
            for j in 0..spec.azimuth_bins() {
                s.set(c, j, BeamRange::Return(5.0 + 0.01 * j as f64));
            }
        }
        s
    }

    #[test]
    fn derive_cycle_examples() {
        assert!((derive_cycle(1.0, 50.0, 1.0, 0.1).unwrap() - 4.9).abs() < 1e-9);
        assert!((derive_cycle(1.0, 50.0, 0.5, 0.1).unwrap() - 9.8).abs() < 1e-9);
        assert!((derive_cycle(3.0, 3.7, 0.7, 0.05).unwrap() - 0.05).abs() < 1e-12);
        assert!(derive_cycle(1.0, 1.0, 1.0, 0.1).is_err());
        assert!(derive_cycle(1.0, 50.0, 0.0, 0.1).is_err());
        assert!(derive_cycle(1.0, 50.0, 1.0, -0.1).is_err());
        assert!(derive_cycle(0.0, 50.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn injection_distance_examples() {
        let cfg = osc(ShapeKind::Corner, 80.0);
        assert_eq!(injection_distance(2.0, &cfg), Some(1.0));
        assert!((injection_distance(2.0 + 2.45, &cfg).unwrap() - 25.5).abs() < 1e-9);
        let late = injection_distance(2.0 + 4.9 - 1e-6, &cfg).unwrap();
        assert!(late <= 50.0 && 50.0 - late < 1.0);
        assert!((injection_distance(2.0 + 4.9, &cfg).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(injection_distance(1.99, &cfg), None);
        assert_eq!(injection_distance(100.5, &cfg), None);
        let mut st = cfg.clone();
        st.motion = Motion::Static;
        assert_eq!(injection_distance(7.3, &st), Some(50.0));
    }

    #[test]
    fn fake_range_examples() {
        assert!((fake_range(0.0, ShapeKind::Corner, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((fake_range(FRAC_PI_4, ShapeKind::Corner, 10.0).unwrap() - 10.0 / SQRT_2).abs() < 1e-9);
        assert!((fake_range(0.0, ShapeKind::Plane, 10.0).unwrap() - 10.0).abs() < 1e-9);
        // flat wall oracle: r = d / cos θ
        let t = PI / 8.0;
        let expect = 10.0 / t.cos();
        assert!((expect - 10.8239).abs() < 1e-4);
        assert!((fake_range(t, ShapeKind::Plane, 10.0).unwrap() - expect).abs() < 1e-9);
        assert!((fake_range(-t, ShapeKind::Plane, 10.0).unwrap() - expect).abs() < 1e-9);
        assert_eq!(fake_range(1.0, ShapeKind::Cylinder, 7.0).unwrap(), 7.0);
        assert!(fake_range(0.0, ShapeKind::Corner, 0.0).is_err());
        assert!(fake_range(4.0, ShapeKind::Corner, 1.0).is_err());
    }

    #[test]
    fn zero_window_is_identity() {
        let spec = flat_spec();
        let clean = filled_scan(&spec, 3.0);
        let mut cfg = osc(ShapeKind::Corner, 80.0);
        cfg.window_width = 0.0;
        let out = tamper_scan(&clean, &Pose::identity(), &cfg, 1.0).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn inactive_is_identity() {
        let spec = flat_spec();
        let clean = filled_scan(&spec, 0.5);
        let out = tamper_scan(&clean, &Pose::identity(), &osc(ShapeKind::Plane, 80.0), 1.0).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn cylinder_horizontal_channel() {
        let spec = flat_spec();
        let mut cfg = osc(ShapeKind::Cylinder, 80.0);
        cfg.motion = Motion::Static;
        let clean = filled_scan(&spec, 3.0);
        let out = tamper_scan(&clean, &Pose::identity(), &cfg, 1.0).unwrap();
        let mut touched = 0;
        for j in 0..spec.azimuth_bins() {
            let rel = wrap_angle(spec.azimuth(j));
            if rel.abs() < 40f64.to_radians() {
                assert_eq!(out.get(1, j), BeamRange::Return(50.0));
                let slanted = out.get(0, j).value().unwrap();
                assert!((slanted - 50.0 / 0.2f64.cos()).abs() < 1e-9);
                touched += 1;
            } else {
                assert_eq!(out.get(1, j), clean.get(1, j));
            }
        }
        assert!(touched > 150);
    }

    #[test]
    fn corner_points_on_square_boundary() {
        // brute force: every in-window horizontal beam, rotated into the shape frame
        let spec = flat_spec();
        let pose = Pose::from_xyz_yaw(4.0, -3.0, 1.0, 0.4);
        let mut cfg = osc(ShapeKind::Corner, 80.0);
        cfg.spoofer_position = Point3::new(20.0, 15.0, 1.0);
        let t = 4.0;
        let d = injection_distance(t, &cfg).unwrap();
        let clean = filled_scan(&spec, t);
        let out = tamper_scan(&clean, &pose, &cfg, 1.0).unwrap();
        let bearing = spoofer_bearing(&pose, &cfg.spoofer_position);
        let mut n = 0;
        for j in 0..spec.azimuth_bins() {
            if out.get(1, j) == clean.get(1, j) {
                continue;
            }
            let r = out.get(1, j).value().unwrap();
            let a = spec.azimuth(j) - bearing;
            let (x, y) = (r * a.cos(), r * a.sin());
            assert!((x.abs() + y.abs() - d).abs() < 1e-6);
            n += 1;
        }
        assert!(n > 100);
    }

    #[test]
    fn clamps_beyond_max_range() {
        let mut spec = (*flat_spec()).clone();
        spec.max_range = 30.0;
        let spec = Arc::new(spec);
        let mut cfg = osc(ShapeKind::Cylinder, 60.0);
        cfg.motion = Motion::Static;
        let out = tamper_scan(&filled_scan(&spec, 3.0), &Pose::identity(), &cfg, 1.0).unwrap();
        assert_eq!(out.get(1, spec.azimuth_bin(0.0)), BeamRange::NoReturn);
        assert!(out.ranges().iter().all(|r| r.value().map_or(true, |v| v <= 30.0)));
    }

    #[test]
    fn auto_cycle_uses_gate() {
        let spec = flat_spec();
        let mut cfg = osc(ShapeKind::Plane, 40.0);
        cfg.auto_cycle = true;
        cfg.t_cycle = 123.0;
        cfg.resolve_cycle(spec.frame_interval, 0.5).unwrap();
        assert!((cfg.t_cycle - 9.8).abs() < 1e-9);
        let sched = cfg.schedule(spec.frame_interval);
        assert!(sched.per_frame_displacement <= 0.5 + 1e-9);
    }

    #[test]
    fn validation_findings() {
        let spec = LidarSpec::default();
        let mut cfg = osc(ShapeKind::Corner, 80.0);
        assert!(validate_schedule(&cfg, &spec, 1.0).is_ok());
        cfg.d_max = 150.0;
        cfg.t_cycle = 14.9;
        let r = validate_schedule(&cfg, &spec, 1.0);
        assert!(r.range_limit_violated() && !r.gate_violated());
        cfg.d_max = 50.0;
        cfg.t_cycle = 1.0;
        let r = validate_schedule(&cfg, &spec, 1.0);
        assert!(r.gate_violated() && !r.range_limit_violated());
        match &r.findings[0] {
            Finding::GateExceeded { per_frame_displacement, .. } => {
                assert!((per_frame_displacement - 4.9).abs() < 1e-9)
            }
            f => panic!("unexpected {f:?}"),
        }
        cfg.d_min = 60.0;
        assert!(validate_schedule(&cfg, &spec, 1.0)
            .findings
            .iter()
            .any(|f| matches!(f, Finding::InvalidParameter { .. })));
    }

    proptest! {
        #[test]
        fn auto_schedule_steps_by_gate(d_min in 0.5f64..5.0, span in 5.0f64..60.0, gate in 0.2f64..2.0) {
            let mut cfg = osc(ShapeKind::Corner, 80.0);
            cfg.d_min = d_min;
            cfg.d_max = d_min + span;
            cfg.auto_cycle = true;
            cfg.active_start = 0.0;
            cfg.resolve_cycle(0.1, gate).unwrap();
            let mut prev = injection_distance(0.0, &cfg).unwrap();
            for k in 1..300 {
                let d = injection_distance(k as f64 * 0.1, &cfg).unwrap();
                prop_assert!(d >= cfg.d_min && d <= cfg.d_max);
                if d > prev {
                    prop_assert!((d - prev - gate).abs() < 1e-9, "step {} != gate {}", d - prev, gate);
                }
                prev = d;
            }
        }

        #[test]
        fn outside_window_untouched(yaw in -PI..PI, sx in -40.0f64..40.0, sy in -40.0f64..40.0,
                                    w in 5.0f64..170.0, t in 2.0f64..20.0) {
            prop_assume!(sx.hypot(sy) > 1.0);
            let spec = flat_spec();
            let pose = Pose::from_xyz_yaw(0.0, 0.0, 0.0, yaw);
            let mut cfg = osc(ShapeKind::Plane, w);
            cfg.spoofer_position = Point3::new(sx, sy, 0.0);
            let clean = filled_scan(&spec, t);
            let out = tamper_scan(&clean, &pose, &cfg, 1.0).unwrap();
            let bearing = spoofer_bearing(&pose, &cfg.spoofer_position);
            for j in 0..spec.azimuth_bins() {
                let rel = wrap_angle(spec.azimuth(j) - bearing);
                for c in 0..spec.channel_count() {
                    if rel.abs() >= cfg.window_width / 2.0 {
                        prop_assert_eq!(out.get(c, j), clean.get(c, j));
                    }
                    if let Some(r) = out.get(c, j).value() {
                        prop_assert!(r <= spec.max_range);
                    }
                }
            }
        }
    }
}
