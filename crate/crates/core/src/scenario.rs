//! Scenario files: nested TOML with explicit units in every key name.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defense::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_BOUNDARY_MARGIN;
use crate::geometry::Point3;
use crate::odometry::IcpConfig;
use crate::spoofer::{validate_schedule, AttackConfig, Motion, ShapeKind};
use crate::world::{fixtures, DeadReckoningNoise, LidarSpec, Surface, World};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub world: WorldSection,
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub lidar: LidarSection,
    #[serde(default)]
    pub icp: IcpSection,
    pub attack: Option<AttackSection>,
    pub detector: Option<DetectorSection>,
    #[serde(default)]
    pub dead_reckoning: DeadReckoningSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_trials() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    /// Name of a built-in world.
    pub fixture: Option<String>,
    #[serde(default)]
    pub surfaces: Vec<SurfaceEntry>,
    /// Directory of recorded scans; replaces raycasting and the trajectory.
    pub replay_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceEntry {
    Rect {
        center_m: [f64; 3],
        half_u_m: [f64; 3],
        half_v_m: [f64; 3],
    },
    Box {
        min_m: [f64; 3],
        max_m: [f64; 3],
    },
}

impl From<&SurfaceEntry> for Surface {
    fn from(e: &SurfaceEntry) -> Self {
        match e {
            SurfaceEntry::Rect {
                center_m,
                half_u_m,
                half_v_m,
            } => Surface::rect(*center_m, *half_u_m, *half_v_m),
            SurfaceEntry::Box { min_m, max_m } => Surface::aabb(*min_m, *max_m),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    #[serde(default)]
    pub waypoints_m: Vec<[f64; 3]>,
    #[serde(default)]
    pub speed_mps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSection {
    pub channels: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range_m: f64,
    pub frame_interval_s: f64,
}

impl Default for LidarSection {
    fn default() -> Self {
        Self {
            channels: 16,
            elevation_min_deg: -15.0,
            elevation_max_deg: 15.0,
            azimuth_step_deg: 0.2,
            max_range_m: 100.0,
            frame_interval_s: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpSection {
    pub max_correspondence_distance_m: f64,
    pub max_iterations: usize,
    pub convergence_translation_m: f64,
    pub convergence_rotation_rad: f64,
    pub downsample_voxel_m: f64,
    pub map_voxel_m: f64,
    pub map_max_points_per_voxel: usize,
}

impl Default for IcpSection {
    fn default() -> Self {
        IcpConfig::default().into()
    }
}

impl From<IcpConfig> for IcpSection {
    fn from(c: IcpConfig) -> Self {
        Self {
            max_correspondence_distance_m: c.max_correspondence_distance,
            max_iterations: c.max_iterations,
            convergence_translation_m: c.convergence_translation,
            convergence_rotation_rad: c.convergence_rotation,
            downsample_voxel_m: c.downsample_voxel,
            map_voxel_m: c.map_voxel,
            map_max_points_per_voxel: c.map_max_points_per_voxel,
        }
    }
}

impl From<&IcpSection> for IcpConfig {
    fn from(s: &IcpSection) -> Self {
        Self {
            max_correspondence_distance: s.max_correspondence_distance_m,
            max_iterations: s.max_iterations,
            convergence_translation: s.convergence_translation_m,
            convergence_rotation: s.convergence_rotation_rad,
            downsample_voxel: s.downsample_voxel_m,
            map_voxel: s.map_voxel_m,
            map_max_points_per_voxel: s.map_max_points_per_voxel,
        }
    }
}

/// Either a number of seconds or the string "auto".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CycleSetting {
    Seconds(f64),
    Auto(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub spoofer_position_m: [f64; 3],
    pub window_deg: f64,
    pub shape: ShapeKind,
    #[serde(default = "default_motion")]
    pub motion: Motion,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub t_cycle_s: CycleSetting,
    pub active_interval_s: [f64; 2],
    /// Per-trial uniform jitter of the spoofer position along each horizontal axis.
    #[serde(default)]
    pub position_jitter_m: f64,
    /// Per-trial uniform jitter of the attack onset; the interval keeps its length.
    #[serde(default)]
    pub start_jitter_s: f64,
}

fn default_motion() -> Motion {
    Motion::Oscillating
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub w_ori: f64,
    pub w_speed: f64,
    pub threshold: f64,
    pub k_on_frames: usize,
    pub k_off_frames: usize,
    pub velocity_window_s: f64,
    #[serde(default)]
    pub gap_from_dead_reckoning: bool,
}

impl From<&DetectorConfig> for DetectorSection {
    fn from(c: &DetectorConfig) -> Self {
        Self {
            w_ori: c.w_ori,
            w_speed: c.w_speed,
            threshold: c.threshold,
            k_on_frames: c.k_on,
            k_off_frames: c.k_off,
            velocity_window_s: c.velocity_window,
            gap_from_dead_reckoning: c.gap_from_dead_reckoning,
        }
    }
}

impl From<&DetectorSection> for DetectorConfig {
    fn from(s: &DetectorSection) -> Self {
        Self {
            w_ori: s.w_ori,
            w_speed: s.w_speed,
            threshold: s.threshold,
            k_on: s.k_on_frames,
            k_off: s.k_off_frames,
            velocity_window: s.velocity_window_s,
            gap_from_dead_reckoning: s.gap_from_dead_reckoning,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeadReckoningSection {
    pub translation_sigma_m: f64,
    pub yaw_sigma_rad: f64,
}

impl Default for DeadReckoningSection {
    fn default() -> Self {
        let n = DeadReckoningNoise::default();
        Self {
            translation_sigma_m: n.translation_sigma,
            yaw_sigma_rad: n.yaw_sigma,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tau_m: f64,
    pub boundary_margin_s: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tau_m: 3.0,
            boundary_margin_s: DEFAULT_BOUNDARY_MARGIN,
        }
    }
}

/// Where scans come from.
#[derive(Clone, Debug)]
pub enum WorldSource {
    Synthetic(Arc<World>),
    Replay(PathBuf),
}

#[derive(Clone, Debug)]
pub struct AttackScenario {
    pub config: AttackConfig,
    pub position_jitter: f64,
    pub start_jitter: f64,
}

/// A parsed scenario with every sub-config in domain units.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub trials: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldSource,
    pub waypoints: Vec<Point3>,
    pub speed: f64,
    pub lidar: Arc<LidarSpec>,
    pub icp: IcpConfig,
    pub attack: Option<AttackScenario>,
    pub detector: Option<DetectorConfig>,
    pub dead_reckoning: DeadReckoningNoise,
    pub tau: f64,
    pub boundary_margin: f64,
    /// SHA-256 of the canonical scenario text, used to pair runs.
    pub hash: String,
    pub file: ScenarioFile,
}

/// Line and column of a byte offset, both 1-based.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(text, s.start);
                    let src = text.lines().nth(line - 1).unwrap_or("");
                    format!("line {line}, column {col}: `{}`: ", src.trim())
                })
                .unwrap_or_default();
            Error::ScenarioParse {
                path: path.to_path_buf(),
                message: format!("{location}{}", e.message()),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Every violation found, empty when the scenario is runnable.
    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trials == 0 {
            out.push("trials must be >= 1".to_string());
        }
        let w = &self.world;
        let sources = w.fixture.is_some() as usize + (!w.surfaces.is_empty()) as usize + w.replay_dir.is_some() as usize;
        if sources == 0 {
            out.push("world needs one of fixture, surfaces or replay_dir".to_string());
        }
        if w.replay_dir.is_some() && sources > 1 {
            out.push("replay_dir cannot be combined with fixture or surfaces".to_string());
        }
        if let Some(name) = &w.fixture {
            if fixtures::by_name(name).is_none() {
                out.push(format!("unknown fixture '{name}'"));
            }
        }
        if w.replay_dir.is_none() {
            if self.trajectory.waypoints_m.len() < 2 {
                out.push("trajectory needs at least 2 waypoints".to_string());
            }
            if !(self.trajectory.speed_mps > 0.0) {
                out.push(format!("trajectory speed {} m/s must be positive", self.trajectory.speed_mps));
            }
        }
        if let Err(e) = World::new("check", w.surfaces.iter().map(Surface::from).collect()) {
            out.push(e.to_string());
        }
        let lidar = self.lidar_spec();
        if let Err(e) = lidar.validate() {
            out.push(e.to_string());
        }
        let icp = IcpConfig::from(&self.icp);
        if let Err(e) = icp.validate() {
            out.push(e.to_string());
        }
        if let Some(d) = &self.detector {
            if let Err(e) = DetectorConfig::from(d).validate() {
                out.push(e.to_string());
            }
        }
        if !(self.dead_reckoning.translation_sigma_m >= 0.0 && self.dead_reckoning.yaw_sigma_rad >= 0.0) {
            out.push("dead-reckoning sigmas must be non-negative".to_string());
        }
        if !(self.eval.tau_m > 0.0) || !(self.eval.boundary_margin_s >= 0.0) {
            out.push("eval tau must be positive and margin non-negative".to_string());
        }
        if let Some(a) = &self.attack {
            match attack_config(a) {
                Ok(cfg) => {
                    let report = validate_schedule(&cfg, &lidar, icp.max_correspondence_distance);
                    out.extend(report.findings.iter().map(|f| f.to_string()));
                }
                Err(e) => out.push(e.to_string()),
            }
            if !(a.position_jitter_m >= 0.0 && a.start_jitter_s >= 0.0) {
                out.push("attack jitter must be non-negative".to_string());
            }
        }
        out
    }

    pub fn lidar_spec(&self) -> LidarSpec {
        let l = &self.lidar;
        LidarSpec::uniform(
            l.channels,
            l.elevation_min_deg.to_radians(),
            l.elevation_max_deg.to_radians(),
            l.azimuth_step_deg.to_radians(),
            l.max_range_m,
            l.frame_interval_s,
        )
    }
}

fn attack_config(a: &AttackSection) -> Result<AttackConfig> {
    let (t_cycle, auto_cycle) = match &a.t_cycle_s {
        CycleSetting::Seconds(s) => (*s, false),
        CycleSetting::Auto(s) if s == "auto" => (0.0, true),
        CycleSetting::Auto(s) => {
            return Err(Error::InvalidAttack(format!("t_cycle_s must be a number or \"auto\", got \"{s}\"")))
        }
    };
    Ok(AttackConfig {
        spoofer_position: Point3::from(a.spoofer_position_m),
        window_width: a.window_deg.to_radians(),
        shape: a.shape,
        motion: a.motion,
        d_min: a.d_min_m,
        d_max: a.d_max_m,
        t_cycle,
        auto_cycle,
        active_start: a.active_interval_s[0],
        active_end: a.active_interval_s[1],
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = ScenarioFile::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    /// Builds a scenario, resolving relative replay paths against `base_dir`.
    pub fn from_file(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        let findings = file.findings();
        if !findings.is_empty() {
            return Err(Error::ScenarioParse {
                path: PathBuf::from(&file.name),
                message: findings.join("; "),
            });
        }
        Self::build(file, base_dir)
    }

    /// Builds without the runnability checks, for sweeps that deliberately
    /// step past the gate. Sub-config validators still apply.
    pub fn from_file_unchecked(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        Self::build(file, base_dir)
    }

    fn build(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        let lidar = file.lidar_spec();
        lidar.validate()?;
        let icp = IcpConfig::from(&file.icp);
        icp.validate()?;
        let world = match &file.world.replay_dir {
            Some(dir) => WorldSource::Replay(if dir.is_absolute() { dir.clone() } else { base_dir.join(dir) }),
            None => {
                let mut world = match &file.world.fixture {
                    Some(name) => fixtures::by_name(name)
                        .ok_or_else(|| Error::InvalidWorld(format!("unknown fixture '{name}'")))?,
                    None => World::empty(),
                };
                for s in &file.world.surfaces {
                    world = world.with_surface(s.into())?;
                }
                WorldSource::Synthetic(Arc::new(world))
            }
        };
        let attack = match &file.attack {
            Some(a) => {
                let mut config = attack_config(a)?;
                config.resolve_cycle(lidar.frame_interval, icp.max_correspondence_distance)?;
                config.validate()?;
                Some(AttackScenario {
                    config,
                    position_jitter: a.position_jitter_m,
                    start_jitter: a.start_jitter_s,
                })
            }
            None => None,
        };
        let detector = match &file.detector {
            Some(d) => {
                let c = DetectorConfig::from(d);
                c.validate()?;
                Some(c)
            }
            None => None,
        };
        let canonical = file.to_toml();
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Ok(Self {
            name: file.name.clone(),
            trials: file.trials,
            base_seed: file.base_seed,
            output_dir: file.output_dir.clone(),
            world,
            waypoints: file.trajectory.waypoints_m.iter().map(|w| Point3::from(*w)).collect(),
            speed: file.trajectory.speed_mps,
            lidar: Arc::new(lidar),
            icp,
            attack,
            detector,
            dead_reckoning: DeadReckoningNoise {
                translation_sigma: file.dead_reckoning.translation_sigma_m,
                yaw_sigma: file.dead_reckoning.yaw_sigma_rad,
            },
            tau: file.eval.tau_m,
            boundary_margin: file.eval.boundary_margin_s,
            hash,
            file,
        })
    }

    pub fn detector_or_default(&self) -> DetectorConfig {
        self.detector.clone().unwrap_or_default()
    }
}

/// A `[detector]` fragment suitable for pasting into a scenario file.
pub fn detector_fragment(cfg: &DetectorConfig) -> String {
    #[derive(Serialize)]
    struct Wrapper<'a> {
        detector: &'a DetectorSection,
    }
    toml::to_string(&Wrapper {
        detector: &DetectorSection::from(cfg),
    })
    .expect("detector serializes")
}

/// Parses a fragment written by [`detector_fragment`].
pub fn parse_detector_fragment(text: &str, path: &Path) -> Result<DetectorConfig> {
    #[derive(Deserialize)]
    struct Wrapper {
        detector: DetectorSection,
    }
    let w: Wrapper = toml::from_str(text).map_err(|e| Error::ScenarioParse {
        path: path.to_path_buf(),
        message: e.message().to_string(),
    })?;
    let cfg = DetectorConfig::from(&w.detector);
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "unit"
trials = 2
base_seed = 7

[world]
fixture = "feature_rich"

[trajectory]
waypoints_m = [[0.0, 0.0, 2.0], [20.0, 0.0, 2.0]]
speed_mps = 5.0

[attack]
spoofer_position_m = [60.0, 0.0, 2.0]
window_deg = 80.0
shape = "corner"
d_min_m = 1.0
d_max_m = 50.0
t_cycle_s = "auto"
active_interval_s = [1.0, 3.0]
"#;

    fn parse(text: &str) -> Result<ScenarioFile> {
        ScenarioFile::parse(text, Path::new("unit.toml"))
    }

    #[test]
    fn valid_scenario_has_no_findings() {
        let f = parse(BASE).unwrap();
        assert!(f.findings().is_empty(), "{:?}", f.findings());
        let s = Scenario::from_file(f, Path::new(".")).unwrap();
        assert!((s.attack.unwrap().config.t_cycle - 4.9).abs() < 1e-12);
        assert_eq!(s.lidar.channel_count(), 16);
        assert_eq!(s.icp, IcpConfig::default());
    }

    #[test]
    fn range_limit_and_gate_findings() {
        let f = parse(&BASE.replace("d_max_m = 50.0", "d_max_m = 150.0")).unwrap();
        let found = f.findings();
        assert!(found.iter().any(|m| m.contains("range-limit")), "{found:?}");

        let f = parse(&BASE.replace("t_cycle_s = \"auto\"", "t_cycle_s = 2.0")).unwrap();
        let found = f.findings();
        assert!(found.iter().any(|m| m.contains("correspondence-gate")), "{found:?}");
        assert!(Scenario::from_file(f, Path::new(".")).is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let text = BASE.replace("window_deg = 80.0", "window_deg = \"wide\"");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 15"), "{err}");
        assert!(err.contains("window_deg"), "{err}");

        let err = parse(&BASE.replace("window_deg", "window_rad")).unwrap_err().to_string();
        assert!(err.contains("window_rad"), "{err}");
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = Scenario::from_file(parse(BASE).unwrap(), Path::new(".")).unwrap();
        let b = Scenario::from_file(parse(&format!("# comment\n{BASE}")).unwrap(), Path::new(".")).unwrap();
        let c = Scenario::from_file(parse(&BASE.replace("trials = 2", "trials = 3")).unwrap(), Path::new(".")).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn detector_fragment_round_trip() {
        let cfg = DetectorConfig {
            w_ori: 0.7,
            w_speed: 0.30000000000000004,
            threshold: 0.42,
            ..DetectorConfig::default()
        };
        let text = detector_fragment(&cfg);
        assert!(text.starts_with("[detector]"));
        let back = parse_detector_fragment(&text, Path::new("frag.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn world_source_rules() {
        let f = parse(&BASE.replace("fixture = \"feature_rich\"", "fixture = \"moon\"")).unwrap();
        assert!(f.findings().iter().any(|m| m.contains("moon")));
        let f = parse(&BASE.replace("fixture = \"feature_rich\"", "replay_dir = \"x\"\nfixture = \"sparse\"")).unwrap();
        assert!(f.findings().iter().any(|m| m.contains("replay_dir")));
    }
}
