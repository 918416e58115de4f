//! SE(3) poses, polar beams and the angular helpers shared by every module.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Rigid transform: rotation as a unit quaternion plus a translation in meters.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose(t=[{:.6}, {:.6}, {:.6}], q=[{:.6}, {:.6}, {:.6}, {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.i, q.j, q.k, q.w
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::new(x, y, z))
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::new(UnitQuaternion::from_euler_angles(0.0, 0.0, yaw), Vec3::zeros())
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(
            UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            Vec3::new(x, y, z),
        )
    }

    /// Builds a pose from raw quaternion components (x, y, z, w order), normalizing them.
    pub fn from_components(translation: [f64; 3], quat_xyzw: [f64; 4]) -> Option<Self> {
        let q = Quaternion::new(quat_xyzw[3], quat_xyzw[0], quat_xyzw[1], quat_xyzw[2]);
        if !(q.norm() > 0.0) || translation.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self::new(
            UnitQuaternion::from_quaternion(q),
            Vec3::from(translation),
        ))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn position(&self) -> Point3 {
        Point3::from(self.translation)
    }

    /// Quaternion components in (x, y, z, w) order.
    pub fn quat_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// Relative motion taking `self` to `other`, i.e. `self⁻¹ ∘ other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, pt: &Point3) -> Point3 {
        Point3::from(self.rotation * pt.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut raw = q.into_inner();
    // canonical hemisphere keeps serialized output stable
    if raw.w < 0.0 {
        raw = -raw;
    }
    UnitQuaternion::new_normalize(raw)
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(p: &Pose, pt: &Point3) -> Point3 {
    p.transform_point(pt)
}

/// Wraps an angle to [−π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Range value of a single beam: either a measured distance or no return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BeamRange {
    Return(f64),
    NoReturn,
}

impl BeamRange {
    pub fn value(self) -> Option<f64> {
        match self {
            BeamRange::Return(r) => Some(r),
            BeamRange::NoReturn => None,
        }
    }

    pub fn is_return(self) -> bool {
        matches!(self, BeamRange::Return(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarBeam {
    /// Radians, 0 along sensor +x, counterclockwise, in [−π, π).
    pub azimuth: f64,
    pub elevation: f64,
    pub range: BeamRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("beam has no return and cannot be converted to a point")]
pub struct NoReturnError;

/// Unit direction for a beam, sensor frame.
pub fn beam_direction(azimuth: f64, elevation: f64) -> Vec3 {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vec3::new(ce * ca, ce * sa, se)
}

pub fn beam_to_point(b: &PolarBeam) -> Result<Point3, NoReturnError> {
    match b.range {
        BeamRange::Return(r) => Ok(Point3::from(beam_direction(b.azimuth, b.elevation) * r)),
        BeamRange::NoReturn => Err(NoReturnError),
    }
}

pub fn point_to_beam(pt: &Point3) -> PolarBeam {
    let horiz = pt.x.hypot(pt.y);
    PolarBeam {
        azimuth: wrap_angle(pt.y.atan2(pt.x)),
        elevation: pt.z.atan2(horiz),
        range: BeamRange::Return(pt.coords.norm()),
    }
}
