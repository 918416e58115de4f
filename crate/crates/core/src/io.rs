//! CSV emitters for trajectories, registration diagnostics and detector logs.
//! Floats use the shortest round-trip representation so output is
//! byte-stable for identical inputs.

use std::fmt::Write;

use crate::defense::{DefendedPoseRecord, DetectorInputs, Phase};
use crate::geometry::Pose;
use crate::odometry::RegistrationDiagnostics;

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,qx,qy,qz,qw";
pub const DIAGNOSTICS_HEADER: &str = "t,inliers,residual,iterations,diverged";
pub const DETECTOR_HEADER: &str = "t,e_ori,e_speed,D,flagged,phase";

pub fn pose_row(t: f64, p: &Pose) -> String {
    let tr = p.translation();
    let q = p.quat_xyzw();
    format!("{t},{},{},{},{},{},{},{}\n", tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3])
}

pub fn trajectory_csv(timestamps: &[f64], poses: &[Pose]) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for (t, p) in timestamps.iter().zip(poses) {
        s.push_str(&pose_row(*t, p));
    }
    s
}

pub fn diagnostics_csv(timestamps: &[f64], diags: &[RegistrationDiagnostics]) -> String {
    let mut s = format!("{DIAGNOSTICS_HEADER}\n");
    for (t, d) in timestamps.iter().zip(diags) {
        let _ = writeln!(s, "{t},{},{},{},{}", d.inliers, d.residual, d.iterations, d.diverged as u8);
    }
    s
}

/// One row of the detector log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorRow {
    pub t: f64,
    pub inputs: DetectorInputs,
    pub d: f64,
    pub flagged: bool,
    pub phase: Phase,
}

impl From<&DefendedPoseRecord> for DetectorRow {
    fn from(r: &DefendedPoseRecord) -> Self {
        Self {
            t: r.t,
            inputs: r.inputs,
            d: r.d,
            flagged: r.flagged,
            phase: r.phase,
        }
    }
}

pub fn detector_csv(rows: &[DetectorRow]) -> String {
    let mut s = format!("{DETECTOR_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.t, r.inputs.e_ori, r.inputs.e_speed, r.d, r.flagged as u8, r.phase
        );
    }
    s
}

/// Parses a trajectory CSV written by [`trajectory_csv`].
pub fn parse_trajectory_csv(text: &str) -> Option<(Vec<f64>, Vec<Pose>)> {
    let mut lines = text.lines();
    if lines.next()? != TRAJECTORY_HEADER {
        return None;
    }
    let mut ts = Vec::new();
    let mut ps = Vec::new();
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|f| f.parse().ok()).collect::<Option<_>>()?;
        if v.len() != 8 {
            return None;
        }
        ts.push(v[0]);
        ps.push(Pose::from_components([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])?);
    }
    Some((ts, ps))
}
