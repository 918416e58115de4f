//! Trajectory error, attack success rate and frame-level detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Timestamps closer than this are the same frame.
pub const TIME_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_BOUNDARY_MARGIN: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApeSummary {
    pub series: Vec<f64>,
    pub max: f64,
    pub rmse: f64,
}

/// Per-frame translational error of `est` against `gt`, with no alignment.
pub fn ape(est_t: &[f64], est: &[Pose], gt_t: &[f64], gt: &[Pose]) -> Result<ApeSummary> {
    if est_t.len() != est.len() {
        return Err(Error::LengthMismatch(est_t.len(), est.len()));
    }
    if gt_t.len() != gt.len() {
        return Err(Error::LengthMismatch(gt_t.len(), gt.len()));
    }
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut series = Vec::with_capacity(est.len());
    for (index, ((te, pe), (tg, pg))) in est_t.iter().zip(est).zip(gt_t.iter().zip(gt)).enumerate() {
        if (te - tg).abs() > TIME_TOLERANCE {
            return Err(Error::TimestampMismatch {
                index,
                expected: *tg,
                found: *te,
            });
        }
        series.push((pe.translation() - pg.translation()).norm());
    }
    let max = series.iter().copied().fold(0.0, f64::max);
    let rmse = (series.iter().map(|e| e * e).sum::<f64>() / series.len() as f64).sqrt();
    Ok(ApeSummary { series, max, rmse })
}

/// One frame of a detector log as scored against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub t: f64,
    pub score: f64,
    pub flagged: bool,
    pub attacked: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub ape_series: Vec<f64>,
    pub ape_max: f64,
    pub ape_rmse: f64,
    pub detector_log: Vec<DetectionFrame>,
    /// Set when the trial could not complete; metrics are then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn from_ape(seed: u64, ape: ApeSummary, detector_log: Vec<DetectionFrame>) -> Self {
        Self {
            seed,
            ape_max: ape.max,
            ape_rmse: ape.rmse,
            ape_series: ape.series,
            detector_log,
            failure: None,
        }
    }

    pub fn failed(seed: u64, reason: impl Into<String>) -> Self {
        Self {
            seed,
            failure: Some(reason.into()),
            ..Default::default()
        }
    }

    pub fn success_at(&self, tau: f64) -> bool {
        self.ape_max >= tau
    }
}

/// Percentage of trials whose maximum error reaches `tau`.
pub fn asr(trials: &[TrialResult], tau: f64) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Empty("trial list"));
    }
    let hits = trials.iter().filter(|t| t.success_at(tau)).count();
    Ok(100.0 * hits as f64 / trials.len() as f64)
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl PrecisionRecall {
    fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let mut diagnostic = None;
        let precision = if tp + fp == 0 {
            diagnostic = Some("no frame flagged; precision undefined, reported as 0".to_string());
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        Self {
            precision,
            recall: tp as f64 / (tp + fn_) as f64,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            diagnostic,
        }
    }
}

/// Times where the ground-truth label changes: the first attacked frame of
/// each run and the last attacked frame before it ends.
fn label_edges(log: &[DetectionFrame]) -> Vec<f64> {
    let mut edges = Vec::new();
    for (i, f) in log.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| log[j].attacked);
        let next = log.get(i + 1).map(|g| g.attacked);
        if f.attacked && prev == Some(false) {
            edges.push(f.t);
        }
        if f.attacked && next == Some(false) {
            edges.push(f.t);
        }
    }
    edges
}

/// Frames farther than `margin` seconds from every label edge.
pub fn scored_frames(log: &[DetectionFrame], margin: f64) -> Vec<DetectionFrame> {
    let edges = label_edges(log);
    log.iter()
        .filter(|f| edges.iter().all(|e| (f.t - e).abs() >= margin))
        .copied()
        .collect()
}

fn class_counts(frames: &[DetectionFrame]) -> Result<(usize, usize)> {
    let pos = frames.iter().filter(|f| f.attacked).count();
    let neg = frames.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

fn confusion(frames: &[DetectionFrame], flagged: impl Fn(&DetectionFrame) -> bool) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for f in frames {
        match (flagged(f), f.attacked) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// Frame-level precision and recall of the `flagged` column.
pub fn precision_recall(log: &[DetectionFrame], margin: f64) -> Result<PrecisionRecall> {
    let frames = scored_frames(log, margin);
    class_counts(&frames)?;
    let (tp, fp, fn_, tn) = confusion(&frames, |f| f.flagged);
    Ok(PrecisionRecall::from_counts(tp, fp, fn_, tn))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of `score >= threshold` at every unique score,
/// thresholds in decreasing order.
pub fn pr_curve(log: &[DetectionFrame], margin: f64) -> Result<Vec<PrPoint>> {
    let frames = scored_frames(log, margin);
    let (pos, _) = class_counts(&frames)?;
    let mut sorted = frames.clone();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].attacked {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
    }
    Ok(curve)
}

/// Precision and recall of `score >= threshold`.
pub fn precision_recall_at(log: &[DetectionFrame], threshold: f64, margin: f64) -> Result<PrecisionRecall> {
    let frames = scored_frames(log, margin);
    class_counts(&frames)?;
    let (tp, fp, fn_, tn) = confusion(&frames, |f| f.score >= threshold);
    Ok(PrecisionRecall::from_counts(tp, fp, fn_, tn))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub trials: usize,
    pub asr: f64,
    pub ape_max_mean: f64,
    pub ape_max_sd: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Aggregates completed trials. Failed trials count toward `trials` but not
/// toward the error statistics. Result order does not matter.
pub fn summarize(scenario: &str, trials: &[TrialResult], tau: f64, margin: f64) -> Result<Summary> {
    let mut done: Vec<&TrialResult> = trials.iter().filter(|t| t.failure.is_none()).collect();
    done.sort_by_key(|t| t.seed);
    let owned: Vec<TrialResult> = done.iter().map(|t| (*t).clone()).collect();
    let asr_value = if owned.is_empty() { 0.0 } else { asr(&owned, tau)? };
    let maxes: Vec<f64> = owned.iter().map(|t| t.ape_max).collect();
    let (ape_max_mean, ape_max_sd) = mean_sd(&maxes);
    let pooled: Vec<DetectionFrame> = owned
        .iter()
        .flat_map(|t| scored_frames(&t.detector_log, margin))
        .collect();
    let (precision, recall) = if pooled.is_empty() {
        (None, None)
    } else {
        match class_counts(&pooled) {
            Ok(_) => {
                let (tp, fp, fn_, tn) = confusion(&pooled, |f| f.flagged);
                let pr = PrecisionRecall::from_counts(tp, fp, fn_, tn);
                (Some(pr.precision), Some(pr.recall))
            }
            Err(_) => (None, None),
        }
    };
    Ok(Summary {
        scenario: scenario.to_string(),
        trials: trials.len(),
        asr: asr_value,
        ape_max_mean,
        ape_max_sd,
        precision,
        recall,
    })
}

/// Pooled frame-level precision and recall across several trial logs, each
/// trimmed by `margin` around its own label edges.
pub fn pooled_precision_recall(logs: &[&[DetectionFrame]], margin: f64) -> Result<PrecisionRecall> {
    let frames: Vec<DetectionFrame> = logs.iter().flat_map(|l| scored_frames(l, margin)).collect();
    class_counts(&frames)?;
    let (tp, fp, fn_, tn) = confusion(&frames, |f| f.flagged);
    Ok(PrecisionRecall::from_counts(tp, fp, fn_, tn))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub trials: usize,
    pub asr: f64,
    pub ape_max_mean: f64,
    pub ape_max_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: String,
    pub tau: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn new(parameter: impl Into<String>, tau: f64) -> Self {
        Self {
            parameter: parameter.into(),
            tau,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, value: impl Into<String>, trials: &[TrialResult]) -> Result<()> {
        let done: Vec<TrialResult> = trials.iter().filter(|t| t.failure.is_none()).cloned().collect();
        let maxes: Vec<f64> = done.iter().map(|t| t.ape_max).collect();
        let (ape_max_mean, ape_max_sd) = mean_sd(&maxes);
        self.rows.push(SweepRow {
            value: value.into(),
            trials: trials.len(),
            asr: if done.is_empty() { 0.0 } else { asr(&done, self.tau)? },
            ape_max_mean,
            ape_max_sd,
        });
        Ok(())
    }

    /// Row with the largest mean maximum error.
    pub fn argmax_ape(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.ape_max_mean.is_finite())
            .max_by(|a, b| a.ape_max_mean.total_cmp(&b.ape_max_mean))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.parameter.as_str(), "trials", "asr", "ape_max_mean", "ape_max_sd"])?;
        for r in &self.rows {
            w.write_record([
                r.value.clone(),
                r.trials.to_string(),
                format!("{}", r.asr),
                format!("{}", r.ape_max_mean),
                format!("{}", r.ape_max_sd),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
