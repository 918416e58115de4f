//! C ABI over the spooflab core. Every fallible call returns an [`SlStatus`];
//! the message of the last failure on the calling thread is available from
//! [`sl_last_error`]. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use spooflab::experiment::{execute, prepare, Condition, RunOptions, RunOutcome};
use spooflab::scenario::{Scenario, ScenarioFile};
use spooflab::spoofer::{derive_cycle, fake_range, ShapeKind};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Runtime = 6,
    OutOfRange = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlShape {
    Cylinder = 0,
    Corner = 1,
    Plane = 2,
}

impl From<SlShape> for ShapeKind {
    fn from(s: SlShape) -> Self {
        match s {
            SlShape::Cylinder => ShapeKind::Cylinder,
            SlShape::Corner => ShapeKind::Corner,
            SlShape::Plane => ShapeKind::Plane,
        }
    }
}

/// Aggregate metrics of one run. `precision` and `recall` are NaN when
/// `has_detection` is 0.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlSummary {
    pub trials: u32,
    pub asr: f64,
    pub ape_max_mean: f64,
    pub ape_max_sd: f64,
    pub has_detection: u8,
    pub precision: f64,
    pub recall: f64,
}

/// A validated scenario.
pub struct SlScenario {
    inner: Scenario,
}

/// Results of [`sl_run`].
pub struct SlRunResult {
    inner: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn classify(e: &spooflab::Error) -> SlStatus {
    use spooflab::Error as E;
    match e {
        E::Io { .. } => SlStatus::Io,
        E::ScenarioParse { .. } | E::Replay(_) => SlStatus::Parse,
        E::InvalidArgument(_)
        | E::InvalidLidarSpec(_)
        | E::InvalidWorld(_)
        | E::InvalidTrajectory(_)
        | E::InvalidAttack(_)
        | E::InvalidIcp(_)
        | E::InvalidDetector(_)
        | E::Empty(_) => SlStatus::InvalidArgument,
        _ => SlStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SlStatus, String)>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SlStatus::Panic
        }
    }
}

fn core_err(e: spooflab::Error) -> (SlStatus, String) {
    (classify(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SlStatus, String)> {
    if p.is_null() {
        return Err((SlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SlStatus, String)> {
    // SAFETY: the caller guarantees a non-null `p` points to writable storage.
    unsafe { p.as_mut() }.ok_or((SlStatus::NullPointer, format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses and validates scenario text. Relative replay paths resolve
/// against `base_dir`, which may be null for the working directory.
///
/// # Safety
/// `text` and a non-null `base_dir` must be NUL-terminated strings; `out`
/// must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut SlScenario,
) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let file = ScenarioFile::parse(text, Path::new("<memory>")).map_err(core_err)?;
        let inner = Scenario::from_file(file, Path::new(base)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SlScenario { inner }));
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_load(path: *const c_char, out: *mut *mut SlScenario) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = Scenario::load(Path::new(path)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SlScenario { inner }));
        Ok(())
    })
}

/// Number of validation findings for scenario text; parse errors are
/// returned as `Parse` with the message in [`sl_last_error`].
///
/// # Safety
/// `text` must be a NUL-terminated string; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_findings(text: *const c_char, count: *mut usize) -> SlStatus {
    guard(|| {
        let count = out_arg(count, "count")?;
        let text = str_arg(text, "text")?;
        let file = ScenarioFile::parse(text, Path::new("<memory>")).map_err(core_err)?;
        let findings = file.findings();
        *count = findings.len();
        if !findings.is_empty() {
            set_error(findings.join("; "));
        }
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_free(scenario: *mut SlScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario's trials in memory. `trials` 0 keeps the scenario's
/// count; `seed` is used only when `override_seed` is true.
///
/// # Safety
/// `scenario` must be a live handle; `out` must point to writable storage
/// for one handle.
#[no_mangle]
pub unsafe extern "C" fn sl_run(
    scenario: *const SlScenario,
    attack: bool,
    defense: bool,
    trials: u32,
    override_seed: bool,
    seed: u64,
    jobs: u32,
    out: *mut *mut SlRunResult,
) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = &scenario.as_ref().ok_or((SlStatus::NullPointer, "scenario is null".to_string()))?.inner;
        let opts = RunOptions {
            condition: Condition { attack, defense },
            trials: (trials > 0).then_some(trials as usize),
            seed: override_seed.then_some(seed),
            out: None,
            jobs: jobs.max(1) as usize,
        };
        let prepared = prepare(s, opts.jobs).map_err(core_err)?;
        let inner = execute(s, &prepared, &opts).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SlRunResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_summary(result: *const SlRunResult, out: *mut SlSummary) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = &result.as_ref().ok_or((SlStatus::NullPointer, "result is null".to_string()))?.inner;
        let s = &r.summary;
        let has = s.precision.is_some() && s.recall.is_some();
        *out = SlSummary {
            trials: s.trials as u32,
            asr: s.asr,
            ape_max_mean: s.ape_max_mean,
            ape_max_sd: s.ape_max_sd,
            has_detection: has as u8,
            precision: s.precision.unwrap_or(f64::NAN),
            recall: s.recall.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Per-trial maximum absolute position error, in seed order.
///
/// # Safety
/// `result` must be a live handle; `ape_max` and `seed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_trial(
    result: *const SlRunResult,
    index: usize,
    seed: *mut u64,
    ape_max: *mut f64,
) -> SlStatus {
    guard(|| {
        let seed = out_arg(seed, "seed")?;
        let ape_max = out_arg(ape_max, "ape_max")?;
        let r = &result.as_ref().ok_or((SlStatus::NullPointer, "result is null".to_string()))?.inner;
        let t = r
            .trials
            .get(index)
            .ok_or((SlStatus::OutOfRange, format!("trial index {index} of {}", r.trials.len())))?;
        *seed = t.seed;
        *ape_max = t.ape_max;
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_run_free(result: *mut SlRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Sawtooth period that moves the wall by exactly `m_corr` per frame.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_derive_cycle(d_min: f64, d_max: f64, m_corr: f64, dt: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = derive_cycle(d_min, d_max, m_corr, dt).map_err(core_err)?;
        Ok(())
    })
}

/// Horizontal range of the injected shape at `theta` radians from the boresight.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_fake_range(theta: f64, shape: SlShape, distance: f64, out: *mut f64) -> SlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = fake_range(theta, shape.into(), distance).map_err(core_err)?;
        Ok(())
    })
}
