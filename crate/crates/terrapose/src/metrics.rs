//! Trajectory evaluation: pose errors, medians, recall at paired
//! translation/rotation thresholds, completeness and frequency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;
use crate::trajectory::{FrameRecord, FrameStatus};

/// Translation error (m) and rotation error (deg, angle of the relative
/// rotation).
pub fn pose_error(est: &Pose, gt: &Pose) -> (f64, f64) {
    let trans = (est.translation() - gt.translation()).norm();
    let rel = gt.rotation().inverse() * est.rotation();
    let angle = ((rel.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    (trans, angle.to_degrees())
}

/// Recall at one paired threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub trans_m: f64,
    pub rot_deg: f64,
    pub percent: f64,
}

/// Per-frame error record inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame_index: usize,
    pub localized: bool,
    pub trans_m: Option<f64>,
    pub rot_deg: Option<f64>,
}

/// Sequence evaluation summary. Medians cover localized frames only;
/// recall counts failed frames as misses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub median_translation_err_m: Option<f64>,
    pub median_rotation_err_deg: Option<f64>,
    pub recall: Vec<RecallEntry>,
    pub completeness_percent: f64,
    pub mean_fps: f64,
    pub per_frame: Vec<FrameError>,
}

/// Target geolocation summary: recall within k meters of 3D error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub recall_at: Vec<(f64, f64)>,
}

fn median(sorted: &mut [f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Evaluates an estimated trajectory against ground truth at the given
/// `(meters, degrees)` threshold pairs.
pub fn compute_metrics(
    records: &[FrameRecord],
    gt: &[Pose],
    thresholds: &[(f64, f64)],
) -> Result<MetricsReport> {
    if records.len() != gt.len() {
        return Err(Error::LengthMismatch { left: records.len(), right: gt.len() });
    }
    let mut per_frame = Vec::with_capacity(records.len());
    let mut trans_errs = Vec::new();
    let mut rot_errs = Vec::new();
    for (r, g) in records.iter().zip(gt) {
        if r.status == FrameStatus::Localized {
            let (t, rot) = pose_error(&r.pose, g);
            trans_errs.push(t);
            rot_errs.push(rot);
            per_frame.push(FrameError {
                frame_index: r.frame_index,
                localized: true,
                trans_m: Some(t),
                rot_deg: Some(rot),
            });
        } else {
            per_frame.push(FrameError {
                frame_index: r.frame_index,
                localized: false,
                trans_m: None,
                rot_deg: None,
            });
        }
    }
    let total = records.len() as f64;
    let recall = thresholds
        .iter()
        .map(|(tm, rd)| {
            let hits = per_frame
                .iter()
                .filter(|f| {
                    f.localized && f.trans_m.unwrap() <= *tm && f.rot_deg.unwrap() <= *rd
                })
                .count();
            RecallEntry { trans_m: *tm, rot_deg: *rd, percent: 100.0 * hits as f64 / total }
        })
        .collect();
    let completeness_percent = 100.0 * trans_errs.len() as f64 / total;
    let mean_latency = records.iter().map(|r| r.latency_ms).sum::<f64>() / total;
    let mean_fps = if mean_latency > 0.0 { 1000.0 / mean_latency } else { 0.0 };
    Ok(MetricsReport {
        median_translation_err_m: median(&mut trans_errs),
        median_rotation_err_deg: median(&mut rot_errs),
        recall,
        completeness_percent,
        mean_fps,
        per_frame,
    })
}

/// Recall@k over target observations with known ground-truth positions.
/// Misses and unobserved targets count against recall.
pub fn compute_target_recall(
    errors: &[Option<f64>],
    ks: &[f64],
) -> TargetReport {
    let total = errors.len().max(1) as f64;
    let recall_at = ks
        .iter()
        .map(|k| {
            let hits = errors.iter().filter(|e| e.map_or(false, |d| d <= *k)).count();
            (*k, 100.0 * hits as f64 / total)
        })
        .collect();
    TargetReport { recall_at }
}
