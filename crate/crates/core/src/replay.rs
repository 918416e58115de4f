//! Recorded-scan replay: one text file per frame with lines
//! `channel azimuth_rad range_m`, plus `groundtruth.csv` with
//! `t,x,y,z,qx,qy,qz,qw` rows in frame order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{BeamRange, Pose};
use crate::world::{GroundTruth, LidarSpec, RangeScan};

pub const GROUND_TRUTH_FILE: &str = "groundtruth.csv";
pub const FRAME_EXTENSION: &str = "txt";

/// Frame files in lexicographic order.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == FRAME_EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

fn parse_frame(text: &str, path: &Path, spec: &Arc<LidarSpec>, timestamp: f64) -> Result<RangeScan> {
    let mut scan = RangeScan::empty(spec.clone(), timestamp);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::Replay(format!("{}:{}: {m}: `{line}`", path.display(), n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad("expected `channel azimuth_rad range_m`"));
        }
        let channel: usize = fields[0].parse().map_err(|_| bad("bad channel"))?;
        let azimuth: f64 = fields[1].parse().map_err(|_| bad("bad azimuth"))?;
        if channel >= spec.channel_count() {
            return Err(bad("channel out of range"));
        }
        if !azimuth.is_finite() {
            return Err(bad("azimuth must be finite"));
        }
        let range = match fields[2] {
            "none" | "nan" | "NaN" => BeamRange::NoReturn,
            s => {
                let r: f64 = s.parse().map_err(|_| bad("bad range"))?;
                if !(r >= 0.0) {
                    return Err(bad("range must be non-negative"));
                }
                if r.is_finite() && r <= spec.max_range {
                    BeamRange::Return(r)
                } else {
                    BeamRange::NoReturn
                }
            }
        };
        scan.set(channel, spec.azimuth_bin(azimuth), range);
    }
    Ok(scan)
}

pub fn read_ground_truth(path: &Path, frame_interval: f64) -> Result<GroundTruth> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut timestamps = Vec::new();
    let mut poses = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Replay(format!("{}: row {} is not numeric", path.display(), i + 1)))?;
        if vals.len() != 8 {
            return Err(Error::Replay(format!("{}: row {} needs 8 columns", path.display(), i + 1)));
        }
        let pose = Pose::from_components([vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6], vals[7]])
            .ok_or_else(|| Error::Replay(format!("{}: row {} has a degenerate quaternion", path.display(), i + 1)))?;
        if let Some(prev) = timestamps.last() {
            if !(vals[0] > *prev) {
                return Err(Error::OutOfOrder {
                    previous: *prev,
                    current: vals[0],
                });
            }
        }
        timestamps.push(vals[0]);
        poses.push(pose);
    }
    Ok(GroundTruth {
        timestamps,
        poses,
        frame_interval,
    })
}

/// Loads every frame of `dir` against `spec`, stamping frames with the
/// ground-truth timestamps.
pub fn load_replay(dir: &Path, spec: &Arc<LidarSpec>) -> Result<(Vec<RangeScan>, GroundTruth)> {
    let gt = read_ground_truth(&dir.join(GROUND_TRUTH_FILE), spec.frame_interval)?;
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Empty("replay frame list"));
    }
    if files.len() != gt.len() {
        return Err(Error::Replay(format!(
            "{} frame files but {} ground-truth rows",
            files.len(),
            gt.len()
        )));
    }
    let scans = files
        .iter()
        .zip(&gt.timestamps)
        .map(|(f, t)| {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            parse_frame(&text, f, spec, *t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scans, gt))
}

/// Writes scans and ground truth in the replay layout.
pub fn write_replay(dir: &Path, scans: &[RangeScan], gt: &GroundTruth) -> Result<()> {
    if scans.len() != gt.len() {
        return Err(Error::LengthMismatch(scans.len(), gt.len()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, scan) in scans.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.{FRAME_EXTENSION}"));
        let mut out = String::new();
        let spec = scan.spec();
        for c in 0..spec.channel_count() {
            for j in 0..spec.azimuth_bins() {
                if let BeamRange::Return(r) = scan.get(c, j) {
                    out.push_str(&format!("{c} {} {r}\n", spec.azimuth(j)));
                }
            }
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(GROUND_TRUTH_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut body = String::from("t,x,y,z,qx,qy,qz,qw\n");
    for (t, p) in gt.timestamps.iter().zip(&gt.poses) {
        body.push_str(&crate::io::pose_row(*t, p));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::world::{fixtures, raycast_scan, sample_trajectory};

    fn coarse() -> Arc<LidarSpec> {
        Arc::new(LidarSpec::uniform(4, -0.1, 0.1, 2f64.to_radians(), 100.0, 0.1))
    }

    #[test]
    fn round_trip_preserves_scans() {
        let spec = coarse();
        let world = fixtures::feature_rich();
        let gt = sample_trajectory(&[Point3::new(0.0, 0.0, 2.0), Point3::new(1.0, 0.0, 2.0)], 2.0, &spec).unwrap();
        let scans: Vec<RangeScan> = gt.poses.iter().zip(&gt.timestamps).map(|(p, t)| raycast_scan(&world, p, &spec, *t)).collect();
        let dir = tempfile::tempdir().unwrap();
        write_replay(dir.path(), &scans, &gt).unwrap();
        let (back, gt2) = load_replay(dir.path(), &spec).unwrap();
        assert_eq!(back.len(), scans.len());
        for (a, b) in back.iter().zip(&scans) {
            assert_eq!(a.ranges(), b.ranges());
            assert_eq!(a.timestamp, b.timestamp);
        }
        for (a, b) in gt2.poses.iter().zip(&gt.poses) {
            assert!(a.between(b).translation().norm() < 1e-12);
        }
    }

    #[test]
    fn malformed_inputs_are_reported() {
        let spec = coarse();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(GROUND_TRUTH_FILE), "t,x,y,z,qx,qy,qz,qw\n0,0,0,0,0,0,0,1\n").unwrap();
        fs::write(dir.path().join("frame_000000.txt"), "0 0.0 5.0\n9 0.0 5.0\n").unwrap();
        let err = load_replay(dir.path(), &spec).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("channel out of range"), "{err}");

        fs::write(dir.path().join("frame_000000.txt"), "0 0.0 5.0\n1 0.1 none\n").unwrap();
        let (scans, _) = load_replay(dir.path(), &spec).unwrap();
        assert_eq!(scans[0].return_count(), 1);

        fs::write(dir.path().join("frame_000001.txt"), "").unwrap();
        assert!(load_replay(dir.path(), &spec).unwrap_err().to_string().contains("2 frame files"));
    }
}
