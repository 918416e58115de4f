//! Seeded trial orchestration: scan synthesis, tampering, victim or defended
//! odometry, metrics, and the artifact layout on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dead_reckoning::VelocityWindow;
use crate::defense::{tune_weights, DefendedOdometry, DetectorConfig, DetectorInputs, LabeledRun, Phase, TuneOutcome};
use crate::error::{Error, Result};
use crate::eval::{ape, summarize, DetectionFrame, Summary, SweepTable, TrialResult};
use crate::geometry::Pose;
use crate::io::{detector_csv, diagnostics_csv, trajectory_csv, DetectorRow};
use crate::odometry::{OdometryState, RegistrationDiagnostics};
use crate::replay::load_replay;
use crate::scenario::{detector_fragment, CycleSetting, Scenario, ScenarioFile, WorldSource};
use crate::spoofer::{tamper_scan, AttackConfig, ShapeKind};
use crate::world::{raycast_scan, sample_trajectory, synth_dead_reckoning, GroundTruth, RangeScan};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Attack placement draws use a stream separate from dead-reckoning noise.
const ATTACK_STREAM: u64 = 0x5f0f_a77a_c4e5_0001;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub attack: bool,
    pub defense: bool,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match (self.attack, self.defense) {
            (false, false) => "clean",
            (true, false) => "attack",
            (false, true) => "clean-defended",
            (true, true) => "attack-defended",
        }
    }
}

/// Ground truth and clean scans shared by every trial of a scenario.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub gt: GroundTruth,
    pub scans: Arc<Vec<RangeScan>>,
}

pub fn prepare(scenario: &Scenario, jobs: usize) -> Result<Prepared> {
    match &scenario.world {
        WorldSource::Replay(dir) => {
            let (scans, gt) = load_replay(dir, &scenario.lidar)?;
            if gt.len() < 2 {
                return Err(Error::Replay("need at least 2 frames".into()));
            }
            Ok(Prepared {
                gt,
                scans: Arc::new(scans),
            })
        }
        WorldSource::Synthetic(world) => {
            let gt = sample_trajectory(&scenario.waypoints, scenario.speed, &scenario.lidar)?;
            let spec = scenario.lidar.clone();
            let scans = with_pool(jobs, || {
                gt.poses
                    .par_iter()
                    .zip(&gt.timestamps)
                    .map(|(p, t)| raycast_scan(world, p, &spec, *t))
                    .collect::<Vec<_>>()
            })?;
            Ok(Prepared {
                gt,
                scans: Arc::new(scans),
            })
        }
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// The attack of one trial after applying the scenario's per-seed jitter.
pub fn trial_attack(scenario: &Scenario, seed: u64) -> Option<AttackConfig> {
    let a = scenario.attack.as_ref()?;
    let mut cfg = a.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ATTACK_STREAM);
    if a.position_jitter > 0.0 {
        cfg.spoofer_position.x += rng.gen_range(-a.position_jitter..=a.position_jitter);
        cfg.spoofer_position.y += rng.gen_range(-a.position_jitter..=a.position_jitter);
    }
    if a.start_jitter > 0.0 {
        let shift = rng.gen_range(0.0..=a.start_jitter);
        cfg.active_start += shift;
        cfg.active_end += shift;
    }
    Some(cfg)
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub result: TrialResult,
    pub timestamps: Vec<f64>,
    /// Victim trajectory, or the defended trajectory when the defense runs.
    pub trajectory: Vec<Pose>,
    pub diagnostics: Vec<RegistrationDiagnostics>,
    pub detector: Vec<DetectorRow>,
    pub labeled: LabeledRun,
    pub attack: Option<AttackConfig>,
}

pub fn run_trial(scenario: &Scenario, prepared: &Prepared, seed: u64, condition: Condition) -> Result<TrialOutput> {
    let gt = &prepared.gt;
    let dr = synth_dead_reckoning(gt, scenario.dead_reckoning, seed)?;
    let attack = if condition.attack { trial_attack(scenario, seed) } else { None };
    let m_corr = scenario.icp.max_correspondence_distance;
    let detector_cfg = scenario.detector_or_default();
    let initial = gt.poses[0];
    let prior = Some(dr.relative_poses[0]);

    let n = gt.len();
    let mut trajectory = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    let mut detector = Vec::with_capacity(n);

    let mut defended = condition
        .defense
        .then(|| DefendedOdometry::new(detector_cfg.clone(), scenario.icp.clone(), initial, prior));
    let mut victim = OdometryState::new(scenario.icp.clone(), initial, prior);
    let mut slam_window = VelocityWindow::new(detector_cfg.velocity_window);
    let mut dr_window = VelocityWindow::new(detector_cfg.velocity_window);
    let mut dr_pose = initial;

    for (i, clean) in prepared.scans.iter().enumerate() {
        let t = gt.timestamps[i];
        let scan = match &attack {
            Some(a) => tamper_scan(clean, &gt.poses[i], a, m_corr)?,
            None => clean.clone(),
        };
        let points = scan.points();
        let increment = if i == 0 { Pose::identity() } else { dr.relative_poses[i - 1] };
        match defended.as_mut() {
            Some(d) => {
                let frame = d.step(t, &points, &increment)?;
                trajectory.push(frame.record.pose);
                diagnostics.push(frame.diagnostics);
                detector.push(DetectorRow::from(&frame.record));
            }
            None => {
                let r = victim.step(&points);
                dr_pose = dr_pose.compose(&increment);
                slam_window.push(t, r.pose);
                dr_window.push(t, dr_pose);
                let inputs = DetectorInputs::from_velocities(&slam_window.estimate(), &dr_window.estimate());
                let d = inputs.metric(&detector_cfg);
                trajectory.push(r.pose);
                diagnostics.push(r.diagnostics);
                detector.push(DetectorRow {
                    t,
                    inputs,
                    d,
                    flagged: inputs.valid && d >= detector_cfg.threshold,
                    phase: Phase::Normal,
                });
            }
        }
    }

    let summary = ape(&gt.timestamps, &trajectory, &gt.timestamps, &gt.poses)?;
    let attacked = |t: f64| attack.as_ref().is_some_and(|a| a.is_active(t));
    let log: Vec<DetectionFrame> = detector
        .iter()
        .map(|r| DetectionFrame {
            t: r.t,
            score: r.d,
            flagged: r.flagged,
            attacked: attacked(r.t),
        })
        .collect();
    let labeled = LabeledRun {
        timestamps: gt.timestamps.clone(),
        inputs: detector.iter().map(|r| r.inputs).collect(),
        attack_intervals: attack.iter().map(|a| (a.active_start, a.active_end)).collect(),
    };
    Ok(TrialOutput {
        result: TrialResult::from_ape(seed, summary, log),
        timestamps: gt.timestamps.clone(),
        trajectory,
        diagnostics,
        detector,
        labeled,
        attack,
    })
}

/// Runs one trial per seed on a pool of `jobs` workers. Output order follows
/// `seeds` regardless of scheduling; a failed trial does not stop the others.
pub fn run_trials(
    scenario: &Scenario,
    prepared: &Prepared,
    seeds: &[u64],
    condition: Condition,
    jobs: usize,
) -> Result<Vec<std::result::Result<TrialOutput, (u64, String)>>> {
    with_pool(jobs, || {
        seeds
            .par_iter()
            .map(|&seed| run_trial(scenario, prepared, seed, condition).map_err(|e| (seed, e.to_string())))
            .collect()
    })
}

pub fn trial_seeds(base_seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|i| base_seed + i).collect()
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub condition: Condition,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            condition: Condition::default(),
            trials: None,
            seed: None,
            out: None,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_hash: String,
    pub condition: Condition,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub manifest: Manifest,
    pub outputs: Vec<TrialOutput>,
    pub trials: Vec<TrialResult>,
    pub dir: Option<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Runs every trial of a prepared scenario without touching the filesystem.
pub fn execute(scenario: &Scenario, prepared: &Prepared, opts: &RunOptions) -> Result<RunOutcome> {
    let trials = opts.trials.unwrap_or(scenario.trials);
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if opts.condition.attack && scenario.attack.is_none() {
        return Err(Error::InvalidArgument(format!("scenario '{}' has no [attack] section", scenario.name)));
    }
    let base_seed = opts.seed.unwrap_or(scenario.base_seed);
    let seeds = trial_seeds(base_seed, trials);
    let raw = run_trials(scenario, prepared, &seeds, opts.condition, opts.jobs)?;
    let mut outputs = Vec::new();
    let mut results = Vec::new();
    for r in raw {
        match r {
            Ok(o) => {
                results.push(o.result.clone());
                outputs.push(o);
            }
            Err((seed, msg)) => {
                log::warn!("trial {seed} failed: {msg}");
                results.push(TrialResult::failed(seed, msg));
            }
        }
    }
    let summary = summarize(&scenario.name, &results, scenario.tau, scenario.boundary_margin)?;
    let manifest = Manifest {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash.clone(),
        condition: opts.condition,
        base_seed,
        seeds,
        artifacts: Vec::new(),
        tool_version: TOOL_VERSION.to_string(),
    };
    Ok(RunOutcome {
        summary,
        manifest,
        outputs,
        trials: results,
        dir: None,
    })
}

pub fn default_run_dir(scenario: &Scenario, condition: Condition) -> PathBuf {
    scenario.output_dir.join(format!("{}-{}", scenario.name, condition.label()))
}

/// Writes per-trial CSVs, `trials.csv`, `summary.json` and `manifest.json`.
pub fn write_outcome(outcome: &mut RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut artifacts = Vec::new();
    for o in &outcome.outputs {
        let sub = format!("trial_{:06}", o.result.seed);
        let files = [
            ("trajectory.csv", trajectory_csv(&o.timestamps, &o.trajectory)),
            ("diagnostics.csv", diagnostics_csv(&o.timestamps, &o.diagnostics)),
            ("detector.csv", detector_csv(&o.detector)),
        ];
        for (name, body) in files {
            let rel = format!("{sub}/{name}");
            write_file(&dir.join(&rel), body)?;
            artifacts.push(rel);
        }
    }
    let mut table = String::from("seed,ape_max,ape_rmse,failure\n");
    for t in &outcome.trials {
        table.push_str(&format!(
            "{},{},{},{}\n",
            t.seed,
            t.ape_max,
            t.ape_rmse,
            t.failure.as_deref().unwrap_or("").replace([',', '\n'], " ")
        ));
    }
    write_file(&dir.join("trials.csv"), table)?;
    artifacts.push("trials.csv".into());
    write_file(&dir.join(SUMMARY_FILE), to_json(&outcome.summary)?)?;
    artifacts.push(SUMMARY_FILE.into());
    outcome.manifest.artifacts = artifacts;
    write_file(&dir.join(MANIFEST_FILE), to_json(&outcome.manifest)?)?;
    outcome.dir = Some(dir.to_path_buf());
    Ok(())
}

/// Full run: prepare, execute, write artifacts.
pub fn cmd_run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let prepared = prepare(scenario, opts.jobs)?;
    let mut outcome = execute(scenario, &prepared, opts)?;
    let dir = opts
        .out
        .clone()
        .unwrap_or_else(|| default_run_dir(scenario, opts.condition));
    write_outcome(&mut outcome, &dir)?;
    Ok(outcome)
}

/// Findings for a scenario file; a parse failure is returned as an error
/// carrying line context.
pub fn cmd_validate(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = ScenarioFile::parse(&text, path)?;
    Ok(file.findings())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    /// Degrees.
    WindowWidth,
    /// Radial wall speed in m/s; sets `t_cycle = (d_max - d_min) / speed`.
    RadialSpeed,
    Shape,
    /// Correspondence gate in meters.
    MCorr,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window_width" | "window_deg" => Ok(Self::WindowWidth),
            "radial_speed" | "t_cycle" => Ok(Self::RadialSpeed),
            "shape" => Ok(Self::Shape),
            "m_corr" | "gate" => Ok(Self::MCorr),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter '{other}' (expected window_width, radial_speed, shape or m_corr)"
            ))),
        }
    }
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::WindowWidth => "window_deg",
            Self::RadialSpeed => "radial_speed_mps",
            Self::Shape => "shape",
            Self::MCorr => "m_corr_m",
        }
    }

    /// A copy of `file` with the swept value applied.
    pub fn apply(self, file: &ScenarioFile, value: &str) -> Result<ScenarioFile> {
        let mut f = file.clone();
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("sweep value '{value}' is not a number")))
        };
        let attack = f
            .attack
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("sweeps need an [attack] section".into()))?;
        match self {
            Self::WindowWidth => attack.window_deg = num()?,
            Self::RadialSpeed => {
                let v = num()?;
                if !(v > 0.0) {
                    return Err(Error::InvalidArgument(format!("radial speed {v} must be positive")));
                }
                attack.t_cycle_s = CycleSetting::Seconds((attack.d_max_m - attack.d_min_m) / v);
            }
            Self::Shape => attack.shape = value.parse::<ShapeKind>()?,
            Self::MCorr => f.icp.max_correspondence_distance_m = num()?,
        }
        Ok(f)
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub table: SweepTable,
    pub runs: Vec<(String, RunOutcome)>,
}

/// One attacked run per value on a shared scan set; writes
/// `sweep_<parameter>.csv` and one summary per value when `out` is set.
pub fn cmd_sweep(
    file: &ScenarioFile,
    base_dir: &Path,
    parameter: SweepParameter,
    values: &[String],
    opts: &RunOptions,
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::Empty("sweep value list"));
    }
    let base = Scenario::from_file_unchecked(file.clone(), base_dir)?;
    let prepared = prepare(&base, opts.jobs)?;
    let mut table = SweepTable::new(parameter.name(), base.tau);
    let mut runs = Vec::new();
    for value in values {
        let scenario = Scenario::from_file_unchecked(parameter.apply(file, value)?, base_dir)?;
        let outcome = execute(&scenario, &prepared, opts)?;
        table.push(value.clone(), &outcome.trials)?;
        runs.push((value.clone(), outcome));
    }
    if let Some(dir) = &opts.out {
        write_file(&dir.join(format!("sweep_{}.csv", parameter.name())), table.to_csv()?)?;
        let summaries: BTreeMap<&str, &Summary> = runs.iter().map(|(v, o)| (v.as_str(), &o.summary)).collect();
        write_file(&dir.join("sweep_summaries.json"), to_json(&summaries)?)?;
    }
    Ok(SweepOutcome { table, runs })
}

/// Runs the attacked trials of every training scenario, gathers detector
/// inputs with labels, and random-searches the detector weights.
pub fn collect_labeled_runs(scenarios: &[Scenario], jobs: usize) -> Result<Vec<LabeledRun>> {
    let mut runs = Vec::new();
    for s in scenarios {
        if s.attack.is_none() {
            return Err(Error::InvalidArgument(format!(
                "training scenario '{}' has no attacked interval",
                s.name
            )));
        }
        let prepared = prepare(s, jobs)?;
        let seeds = trial_seeds(s.base_seed, s.trials);
        let condition = Condition {
            attack: true,
            defense: false,
        };
        for r in run_trials(s, &prepared, &seeds, condition, jobs)? {
            match r {
                Ok(o) => runs.push(o.labeled),
                Err((seed, msg)) => log::warn!("training trial {seed} of '{}' failed: {msg}", s.name),
            }
        }
    }
    Ok(runs)
}

pub fn cmd_tune(scenarios: &[Scenario], trials: usize, seed: u64, jobs: usize, out: Option<&Path>) -> Result<TuneOutcome> {
    if trials == 0 {
        return Err(Error::InvalidArgument("tuning needs at least one trial".into()));
    }
    let first = scenarios
        .first()
        .ok_or(Error::Empty("training scenario list"))?;
    let runs = collect_labeled_runs(scenarios, jobs)?;
    let base: DetectorConfig = first.detector_or_default();
    let outcome = tune_weights(&runs, trials, seed, &base, first.boundary_margin)?;
    if let Some(path) = out {
        write_file(path, detector_fragment(&outcome.config))?;
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dir: String,
    pub scenario: Option<String>,
    pub scenario_hash: Option<String>,
    pub attack: Option<bool>,
    pub defense: Option<bool>,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

fn read_run_dir(dir: &Path) -> std::result::Result<(Manifest, Summary), String> {
    let read = |name: &str| -> std::result::Result<String, String> {
        fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))
    };
    let manifest: Manifest = serde_json::from_str(&read(MANIFEST_FILE)?).map_err(|e| format!("{MANIFEST_FILE}: {e}"))?;
    let summary: Summary = serde_json::from_str(&read(SUMMARY_FILE)?).map_err(|e| format!("{SUMMARY_FILE}: {e}"))?;
    Ok((manifest, summary))
}

/// Joins run summaries, ordered by scenario hash then condition so paired
/// attack-on / attack-off runs sit next to each other.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    if dirs.is_empty() {
        return Err(Error::Empty("experiment directory list"));
    }
    let mut rows: Vec<ReportRow> = dirs
        .iter()
        .map(|d| match read_run_dir(d) {
            Ok((m, s)) => ReportRow {
                dir: d.display().to_string(),
                scenario: Some(m.scenario),
                scenario_hash: Some(m.scenario_hash),
                attack: Some(m.condition.attack),
                defense: Some(m.condition.defense),
                summary: Some(s),
                error: None,
            },
            Err(e) => ReportRow {
                dir: d.display().to_string(),
                scenario: None,
                scenario_hash: None,
                attack: None,
                defense: None,
                summary: None,
                error: Some(e),
            },
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.scenario_hash, a.attack, a.defense, &a.dir).cmp(&(&b.scenario_hash, b.attack, b.defense, &b.dir))
    });
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dir", "scenario", "scenario_hash", "attack", "defense", "trials", "asr", "ape_max_mean", "ape_max_sd",
        "precision", "recall", "error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let s = r.summary.as_ref();
        w.write_record([
            r.dir.clone(),
            r.scenario.clone().unwrap_or_default(),
            r.scenario_hash.clone().unwrap_or_default(),
            r.attack.map(|b| b.to_string()).unwrap_or_default(),
            r.defense.map(|b| b.to_string()).unwrap_or_default(),
            s.map(|s| s.trials.to_string()).unwrap_or_default(),
            opt(s.map(|s| s.asr)),
            opt(s.map(|s| s.ape_max_mean)),
            opt(s.map(|s| s.ape_max_sd)),
            opt(s.and_then(|s| s.precision)),
            opt(s.and_then(|s| s.recall)),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_report(rows: &[ReportRow], out: &Path) -> Result<()> {
    write_file(&out.join("report.csv"), report_csv(rows)?)?;
    write_file(&out.join("report.json"), to_json(&rows)?)
}
