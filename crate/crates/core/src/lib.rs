//! Closed-loop LiDAR spoofing laboratory: synthetic worlds and scans, a
//! gated ICP odometry victim, radial point-cloud injection attacks, and an
//! inertial-switching defense with trajectory reconciliation.

pub mod dead_reckoning;
pub mod defense;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod odometry;
pub mod replay;
pub mod scenario;
pub mod spoofer;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{Point3, Pose, Vec3};
