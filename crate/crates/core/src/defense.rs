//! Inertial-switching defense: velocity-consistency detection against dead
//! reckoning, fallback to dead reckoning while under attack, odometry restart
//! once the anomaly clears, and re-anchoring of the restarted trajectory.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dead_reckoning::{VelocityEstimate, VelocityWindow};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose, Vec3};
use crate::odometry::{IcpConfig, OdometryState, RegistrationDiagnostics};

/// Below this speed (m/s) the direction of motion is undefined.
pub const STATIONARY_SPEED: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub w_ori: f64,
    pub w_speed: f64,
    pub threshold: f64,
    pub k_on: usize,
    pub k_off: usize,
    /// Seconds.
    pub velocity_window: f64,
    /// Bridge the detection-to-restart gap with accumulated dead reckoning
    /// instead of the constant-velocity extrapolation.
    #[serde(default)]
    pub gap_from_dead_reckoning: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            w_ori: 0.5,
            w_speed: 0.5,
            threshold: 1.0,
            k_on: 3,
            k_off: 10,
            velocity_window: 1.0,
            gap_from_dead_reckoning: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDetector(m));
        if !(self.w_ori >= 0.0 && self.w_speed >= 0.0) {
            return bad("weights must be non-negative".into());
        }
        if (self.w_ori + self.w_speed - 1.0).abs() > 1e-9 {
            return bad(format!("weights must sum to 1 (got {} + {})", self.w_ori, self.w_speed));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return bad(format!("threshold {} must be positive", self.threshold));
        }
        if self.k_on == 0 || self.k_off == 0 {
            return bad("k_on and k_off must be >= 1".into());
        }
        if !(self.velocity_window > 0.0) {
            return bad("velocity window must be positive".into());
        }
        Ok(())
    }

    pub fn is_flagged(&self, e_ori: f64, e_speed: f64) -> bool {
        detection_metric(e_ori, e_speed, self) >= self.threshold
    }
}

/// One minus the cosine similarity of the two velocity directions.
pub fn orientation_error(v_slam: &Vec3, v_dr: &Vec3) -> f64 {
    let (a, b) = (v_slam.norm(), v_dr.norm());
    if a < STATIONARY_SPEED || b < STATIONARY_SPEED {
        return 0.0;
    }
    (1.0 - v_slam.dot(v_dr) / (a * b)).clamp(0.0, 2.0)
}

pub fn speed_error(v_slam: &Vec3, v_dr: &Vec3) -> f64 {
    (v_slam - v_dr).norm()
}

pub fn detection_metric(e_ori: f64, e_speed: f64, cfg: &DetectorConfig) -> f64 {
    cfg.w_ori * e_ori + cfg.w_speed * e_speed
}

/// Constant-velocity relative motion over `gap` seconds, detection body frame.
pub fn predict_gap_transform(velocity_at_det: &Vec3, yaw_rate_at_det: f64, gap: f64) -> Pose {
    Pose::new(
        nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, yaw_rate_at_det * gap),
        velocity_at_det * gap,
    )
}

/// `world_t_det ∘ det_t_restart ∘ restart_t_current`.
pub fn reconcile(world_t_det: &Pose, det_t_restart: &Pose, restart_t_current: &Pose) -> Pose {
    world_t_det.compose(det_t_restart).compose(restart_t_current)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Normal,
    Attack,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Normal => "NORMAL",
            Phase::Attack => "ATTACK",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    Slam,
    DeadReckoning,
}

/// Per-frame detector inputs. `valid` is false until both velocity windows fill.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorInputs {
    pub e_ori: f64,
    pub e_speed: f64,
    pub valid: bool,
}

impl DetectorInputs {
    pub fn from_velocities(slam: &VelocityEstimate, dr: &VelocityEstimate) -> Self {
        if !(slam.valid && dr.valid) {
            return Self::default();
        }
        Self {
            e_ori: orientation_error(&slam.linear_velocity, &dr.linear_velocity),
            e_speed: speed_error(&slam.linear_velocity, &dr.linear_velocity),
            valid: true,
        }
    }

    pub fn metric(&self, cfg: &DetectorConfig) -> f64 {
        if self.valid {
            detection_metric(self.e_ori, self.e_speed, cfg)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefendedPoseRecord {
    pub t: f64,
    pub pose: Pose,
    pub source: PoseSource,
    pub inputs: DetectorInputs,
    pub d: f64,
    pub flagged: bool,
    pub phase: Phase,
}

#[derive(Clone, Copy, Debug)]
struct FrameMemo {
    t: f64,
    defended: Pose,
    dr_pose: Pose,
    velocity: VelocityEstimate,
    flagged: bool,
}

/// What the caller must do with the shadow odometry after a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShadowCommand {
    Keep,
    /// Clear the shadow map and re-initialize it at identity on the current
    /// frame, seeding its motion prior with `prior_motion`.
    Restart { prior_motion: Pose },
}

#[derive(Clone, Debug)]
pub struct DefenseState {
    pub phase: Phase,
    /// Maps shadow-odometry poses into the world frame.
    pub world_t_restart: Pose,
    pub anchor_world_t_det: Option<Pose>,
    pub velocity_at_det: Vec3,
    pub yaw_rate_at_det: f64,
    pub consecutive_over: usize,
    pub consecutive_under: usize,
    pub t_det: f64,
    pub restarts: usize,
    dr_at_det: Pose,
    dr_pose: Pose,
    last_increment: Pose,
    last_t: Option<f64>,
    slam_window: VelocityWindow,
    dr_window: VelocityWindow,
    defended_window: VelocityWindow,
    memo: VecDeque<FrameMemo>,
}

impl DefenseState {
    /// `initial` is the shared world pose both estimators start from.
    pub fn new(initial: Pose, cfg: &DetectorConfig) -> Self {
        Self {
            phase: Phase::Normal,
            world_t_restart: Pose::identity(),
            anchor_world_t_det: None,
            velocity_at_det: Vec3::zeros(),
            yaw_rate_at_det: 0.0,
            consecutive_over: 0,
            consecutive_under: 0,
            t_det: 0.0,
            restarts: 0,
            dr_at_det: initial,
            dr_pose: initial,
            last_increment: Pose::identity(),
            last_t: None,
            slam_window: VelocityWindow::new(cfg.velocity_window),
            dr_window: VelocityWindow::new(cfg.velocity_window),
            defended_window: VelocityWindow::new(cfg.velocity_window),
            memo: VecDeque::new(),
        }
    }

    pub fn dead_reckoning_pose(&self) -> &Pose {
        &self.dr_pose
    }
}

fn check_order(state: &DefenseState, t: f64) -> Result<()> {
    match state.last_t {
        Some(prev) if !(t > prev) => Err(Error::OutOfOrder { previous: prev, current: t }),
        _ => Ok(()),
    }
}

/// Advances the dead-reckoning channel and the anchored shadow trajectory by
/// one frame and returns the detector inputs for that frame.
fn observe(state: &mut DefenseState, t: f64, shadow_pose: &Pose, dr_increment: &Pose) -> DetectorInputs {
    state.dr_pose = state.dr_pose.compose(dr_increment);
    state.last_increment = *dr_increment;
    state.dr_window.push(t, state.dr_pose);
    state
        .slam_window
        .push(t, state.world_t_restart.compose(shadow_pose));
    DetectorInputs::from_velocities(&state.slam_window.estimate(), &state.dr_window.estimate())
}

/// One frame of the detect / switch / restart / re-anchor cycle.
pub fn defense_step(
    state: &mut DefenseState,
    t: f64,
    shadow_pose: &Pose,
    dr_increment: &Pose,
    cfg: &DetectorConfig,
) -> Result<(DefendedPoseRecord, ShadowCommand)> {
    check_order(state, t)?;
    let inputs = observe(state, t, shadow_pose, dr_increment);
    Ok(advance(state, t, shadow_pose, inputs, cfg))
}

/// Same as [`defense_step`] with externally supplied detector inputs.
pub fn defense_step_with_inputs(
    state: &mut DefenseState,
    t: f64,
    shadow_pose: &Pose,
    dr_increment: &Pose,
    inputs: DetectorInputs,
    cfg: &DetectorConfig,
) -> Result<(DefendedPoseRecord, ShadowCommand)> {
    check_order(state, t)?;
    observe(state, t, shadow_pose, dr_increment);
    Ok(advance(state, t, shadow_pose, inputs, cfg))
}

fn advance(
    state: &mut DefenseState,
    t: f64,
    shadow_pose: &Pose,
    inputs: DetectorInputs,
    cfg: &DetectorConfig,
) -> (DefendedPoseRecord, ShadowCommand) {
    let d = inputs.metric(cfg);
    let flagged = inputs.valid && d >= cfg.threshold;
    let mut command = ShadowCommand::Keep;

    let (pose, source) = match state.phase {
        Phase::Normal => {
            state.consecutive_over = if flagged { state.consecutive_over + 1 } else { 0 };
            if state.consecutive_over >= cfg.k_on {
                enter_attack(state, cfg);
                (dead_reckoned(state), PoseSource::DeadReckoning)
            } else {
                (state.world_t_restart.compose(shadow_pose), PoseSource::Slam)
            }
        }
        Phase::Attack => {
            state.consecutive_under = if flagged { 0 } else { state.consecutive_under + 1 };
            if state.consecutive_under >= cfg.k_off {
                let anchor = restart(state, t, cfg);
                command = ShadowCommand::Restart {
                    prior_motion: state.last_increment,
                };
                (anchor, PoseSource::Slam)
            } else {
                (dead_reckoned(state), PoseSource::DeadReckoning)
            }
        }
    };

    state.defended_window.push(t, pose);
    state.memo.push_back(FrameMemo {
        t,
        defended: pose,
        dr_pose: state.dr_pose,
        velocity: state.defended_window.estimate(),
        flagged,
    });
    while state.memo.len() > cfg.k_on + 1 {
        state.memo.pop_front();
    }
    state.last_t = Some(t);

    (
        DefendedPoseRecord {
            t,
            pose,
            source,
            inputs,
            d,
            flagged,
            phase: state.phase,
        },
        command,
    )
}

fn dead_reckoned(state: &DefenseState) -> Pose {
    let anchor = state.anchor_world_t_det.expect("anchor set during attack");
    anchor.compose(&state.dr_at_det.between(&state.dr_pose))
}

fn enter_attack(state: &mut DefenseState, cfg: &DetectorConfig) {
    // the last un-flagged frame before the current streak; the memo holds
    // previous frames only, so the streak occupies its last k_on - 1 entries
    let streak_prev = cfg.k_on - 1;
    let idx = state.memo.len().checked_sub(streak_prev + 1);
    let anchor = idx
        .and_then(|i| state.memo.get(i))
        .filter(|m| !m.flagged)
        .or_else(|| state.memo.iter().rev().skip(streak_prev).find(|m| !m.flagged))
        .or(state.memo.front())
        .copied();
    let (t_det, pose, dr_pose, velocity) = match anchor {
        Some(m) => (m.t, m.defended, m.dr_pose, m.velocity),
        None => (
            state.last_t.unwrap_or(0.0),
            state.dr_pose,
            state.dr_pose,
            VelocityEstimate::invalid(),
        ),
    };
    let velocity = if velocity.valid {
        velocity
    } else {
        state.dr_window.estimate()
    };
    state.phase = Phase::Attack;
    state.anchor_world_t_det = Some(pose);
    state.t_det = t_det;
    state.dr_at_det = dr_pose;
    state.velocity_at_det = if velocity.valid { velocity.linear_velocity } else { Vec3::zeros() };
    state.yaw_rate_at_det = if velocity.valid { velocity.yaw_rate } else { 0.0 };
    state.consecutive_under = 0;
}

fn restart(state: &mut DefenseState, t: f64, cfg: &DetectorConfig) -> Pose {
    let world_t_det = state.anchor_world_t_det.expect("anchor set during attack");
    let det_t_restart = if cfg.gap_from_dead_reckoning {
        state.dr_at_det.between(&state.dr_pose)
    } else {
        let body_velocity = world_t_det.rotation().inverse() * state.velocity_at_det;
        predict_gap_transform(&body_velocity, state.yaw_rate_at_det, t - state.t_det)
    };
    let anchor = reconcile(&world_t_det, &det_t_restart, &Pose::identity());
    state.world_t_restart = anchor;
    state.phase = Phase::Normal;
    state.anchor_world_t_det = None;
    state.consecutive_over = 0;
    state.consecutive_under = 0;
    state.restarts += 1;
    state.slam_window.clear();
    state.slam_window.push(t, anchor);
    anchor
}

/// Shadow odometry plus defense state, advanced one frame at a time.
#[derive(Clone, Debug)]
pub struct DefendedOdometry {
    pub cfg: DetectorConfig,
    pub shadow: OdometryState,
    pub state: DefenseState,
}

impl DefendedOdometry {
    pub fn new(cfg: DetectorConfig, icp: IcpConfig, initial: Pose, prior_motion: Option<Pose>) -> Self {
        Self {
            state: DefenseState::new(initial, &cfg),
            shadow: OdometryState::new(icp, initial, prior_motion),
            cfg,
        }
    }

    pub fn step(&mut self, t: f64, points: &[Point3], dr_increment: &Pose) -> Result<DefendedFrame> {
        let shadow = self.shadow.step(points);
        let shadow_world = self.state.world_t_restart.compose(&shadow.pose);
        let (record, command) = defense_step(&mut self.state, t, &shadow.pose, dr_increment, &self.cfg)?;
        if let ShadowCommand::Restart { prior_motion } = command {
            self.shadow.reset(Pose::identity(), Some(prior_motion));
            self.shadow.step(points);
        }
        Ok(DefendedFrame {
            record,
            shadow_world,
            diagnostics: shadow.diagnostics,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefendedFrame {
    pub record: DefendedPoseRecord,
    /// Shadow odometry pose mapped into the world frame, before any restart.
    pub shadow_world: Pose,
    pub diagnostics: RegistrationDiagnostics,
}

/// Frame-level detector inputs of one run with its attack intervals (seconds).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LabeledRun {
    pub timestamps: Vec<f64>,
    pub inputs: Vec<DetectorInputs>,
    pub attack_intervals: Vec<(f64, f64)>,
}

impl LabeledRun {
    pub fn is_attacked(&self, t: f64) -> bool {
        self.attack_intervals.iter().any(|&(a, b)| t >= a && t <= b)
    }

    /// Frames farther than `margin` from every interval edge.
    pub fn scored_frames(&self, margin: f64) -> impl Iterator<Item = (&DetectorInputs, bool)> + '_ {
        self.timestamps.iter().zip(&self.inputs).filter_map(move |(&t, inp)| {
            let near_edge = self
                .attack_intervals
                .iter()
                .any(|&(a, b)| (t - a).abs() < margin || (t - b).abs() < margin);
            (!near_edge).then(|| (inp, self.is_attacked(t)))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub config: DetectorConfig,
    pub f1: f64,
    pub trials: usize,
}

pub const THRESHOLD_SEARCH_RANGE: (f64, f64) = (1e-3, 1e2);

/// Seeded random search over `w_ori` and the threshold maximizing frame-level F1.
pub fn tune_weights(
    runs: &[LabeledRun],
    trials: usize,
    seed: u64,
    base: &DetectorConfig,
    boundary_margin: f64,
) -> Result<TuneOutcome> {
    if trials == 0 {
        return Err(Error::InvalidArgument("tuning needs at least one trial".into()));
    }
    let frames: Vec<(DetectorInputs, bool)> = runs
        .iter()
        .flat_map(|r| r.scored_frames(boundary_margin).map(|(i, l)| (*i, l)))
        .collect();
    let positives = frames.iter().filter(|f| f.1).count();
    if frames.is_empty() || positives == 0 || positives == frames.len() {
        return Err(Error::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (THRESHOLD_SEARCH_RANGE.0.ln(), THRESHOLD_SEARCH_RANGE.1.ln());
    let mut best: Option<(DetectorConfig, f64)> = None;
    for _ in 0..trials {
        let w_ori: f64 = rng.gen_range(0.0..=1.0);
        let threshold = rng.gen_range(lo..hi).exp();
        let cand = DetectorConfig {
            w_ori,
            w_speed: 1.0 - w_ori,
            threshold,
            ..base.clone()
        };
        let f1 = frame_f1(&frames, &cand);
        if best.as_ref().map_or(true, |(_, b)| f1 > *b) {
            best = Some((cand, f1));
        }
    }
    let (config, f1) = best.expect("trials >= 1");
    Ok(TuneOutcome { config, f1, trials })
}

pub fn frame_f1(frames: &[(DetectorInputs, bool)], cfg: &DetectorConfig) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (inp, truth) in frames {
        let flagged = inp.valid && inp.metric(cfg) >= cfg.threshold;
        match (flagged, *truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}
