//! Scoring detections against annotations.
//!
//! Frame level compares rasterized masks. Activity level matches events
//! one-to-one and reports recall against false detections per minute.
//! All labels collapse into one event class for scoring; per-label recall is
//! available separately.

mod hungarian;
mod roc;

pub use hungarian::{assign_min_cost, hungarian_match, Matching};
pub use roc::{detect_events, roc_sweep, RocCurve, RocPoint, RocTables, SweepGrid};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_stream::Fps;
use crate::gating::{rasterize, EventInterval};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub intervals: Vec<EventInterval>,
    pub total_frames: u64,
    pub fps: Fps,
}

impl AnnotationSet {
    pub fn new(intervals: Vec<EventInterval>, total_frames: u64, fps: Fps) -> Result<Self> {
        let s = Self {
            intervals,
            total_frames,
            fps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for iv in &self.intervals {
            if iv.start > iv.end || iv.end >= self.total_frames {
                return Err(Error::Contract(format!(
                    "annotation [{}, {}] outside [0, {})",
                    iv.start, iv.end, self.total_frames
                )));
            }
        }
        Ok(())
    }

    pub fn duration_minutes(&self) -> f64 {
        self.fps.minutes(self.total_frames)
    }

    pub fn mask(&self) -> Vec<bool> {
        rasterize(&self.intervals, self.total_frames as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    /// `tp / (tp + fn)`, 0 when there are no positive frames.
    pub recall: f64,
    /// `fp / (fp + tn)`, 0 when there are no negative frames.
    pub fpr: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-frame confusion counts of `detected` against the union of truth
/// intervals.
pub fn frame_level(detected: &[bool], truth: &AnnotationSet) -> Result<FrameMetrics> {
    if detected.len() as u64 != truth.total_frames {
        return Err(Error::Contract(format!(
            "detection covers {} frames, annotations cover {}",
            detected.len(),
            truth.total_frames
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&d, t) in detected.iter().zip(truth.mask()) {
        match (d, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(FrameMetrics {
        tp,
        fp,
        tn,
        fn_,
        recall: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityMetrics {
    pub matched: u64,
    pub gt_total: u64,
    pub det_total: u64,
    /// `matched / gt_total`, 0 without ground truth.
    pub recall: f64,
    pub fp_per_min: f64,
}

/// Activity-level recall and false detections per minute.
pub fn activity_level(
    gt: &[EventInterval],
    det: &[EventInterval],
    duration_minutes: f64,
    min_overlap: u64,
) -> Result<ActivityMetrics> {
    if !(duration_minutes > 0.0) {
        return Err(Error::Contract(format!(
            "duration must be positive, got {duration_minutes} minutes"
        )));
    }
    let matched = hungarian_match(gt, det, min_overlap).len() as u64;
    let (gt_total, det_total) = (gt.len() as u64, det.len() as u64);
    Ok(ActivityMetrics {
        matched,
        gt_total,
        det_total,
        recall: ratio(matched, gt_total),
        fp_per_min: (det_total - matched) as f64 / duration_minutes,
    })
}

/// Matched and total ground-truth counts per label (unlabelled events are
/// grouped under `"event"`).
pub fn per_label_recall(gt: &[EventInterval], det: &[EventInterval], min_overlap: u64) -> BTreeMap<String, (u64, u64)> {
    let matching = hungarian_match(gt, det, min_overlap);
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let key = |iv: &EventInterval| iv.label.clone().unwrap_or_else(|| "event".to_string());
    for iv in gt {
        out.entry(key(iv)).or_default().1 += 1;
    }
    for &(i, _) in &matching.pairs {
        out.entry(key(&gt[i])).or_default().0 += 1;
    }
    out
}
