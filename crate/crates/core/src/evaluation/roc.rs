//! ROC families over the gate grid.
//!
//! Frame level: one curve per joining window `phi`, points swept over the
//! threshold `psi`. Activity level: one curve per `psi`, points swept over
//! `phi`.

use serde::{Deserialize, Serialize};

use super::{activity_level, frame_level, AnnotationSet};
use crate::error::{Error, Result};
use crate::gating::{align_to_frames, extract_scored_events, gate, rasterize, smooth_adaptive, EventInterval, GateMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub psi: Vec<f64>,
    pub phi: Vec<u64>,
    pub mode: GateMode,
    /// Smoothing window n (adaptive mode).
    pub window: usize,
    /// Retained history m (adaptive mode); must exceed `window`.
    pub buffer: usize,
    /// Minimum shared frames for an activity match.
    pub min_overlap: u64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.psi.is_empty() || self.phi.is_empty() {
            return Err(Error::Config("sweep grid needs at least one psi and one phi".into()));
        }
        if self.psi.iter().any(|p| p.is_nan()) {
            return Err(Error::Config("psi must not be NaN".into()));
        }
        if self.mode == GateMode::Adaptive && !(1 <= self.window && self.window < self.buffer) {
            return Err(Error::Config(format!(
                "adaptive gate needs 1 <= n < m, got n={} m={}",
                self.window, self.buffer
            )));
        }
        Ok(())
    }

    /// The signal the thresholds are applied to.
    pub fn gated_values(&self, signal: &[f64]) -> Vec<f64> {
        match self.mode {
            GateMode::Simple => signal.to_vec(),
            GateMode::Adaptive => smooth_adaptive(signal, self.window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// The swept parameter (psi for frame curves, phi for activity curves).
    pub param: f64,
    pub recall: f64,
    /// Frame false-positive rate, or false detections per minute.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// The parameter held fixed along this curve.
    pub fixed: f64,
    pub points: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocTables {
    pub frame: Vec<RocCurve>,
    pub activity: Vec<RocCurve>,
}

/// Gates per-sample values at `psi`, moves decisions onto frames and merges
/// them with window `phi`. Intervals are in frame coordinates and scored by
/// their peak gated value.
pub fn detect_events(values: &[f64], psi: f64, phi: u64, total_frames: u64) -> Result<Vec<EventInterval>> {
    let total = total_frames as usize;
    if values.len() + 1 > total {
        return Err(Error::Contract(format!(
            "{} loss samples do not fit in {total_frames} frames",
            values.len()
        )));
    }
    let mut decisions = align_to_frames(&gate(values, psi), false);
    let mut scores = align_to_frames(values, f64::NEG_INFINITY);
    decisions.resize(total, false);
    scores.resize(total, f64::NEG_INFINITY);
    Ok(extract_scored_events(&decisions, &scores, phi))
}

/// Frame- and activity-level ROC tables for a loss signal over a grid.
pub fn roc_sweep(signal: &[f64], truth: &AnnotationSet, grid: &SweepGrid) -> Result<RocTables> {
    grid.validate()?;
    let values = grid.gated_values(signal);
    let minutes = truth.duration_minutes();
    let mut frame: Vec<RocCurve> = grid
        .phi
        .iter()
        .map(|&phi| RocCurve {
            fixed: phi as f64,
            points: Vec::with_capacity(grid.psi.len()),
        })
        .collect();
    let mut activity = Vec::with_capacity(grid.psi.len());

    for &psi in &grid.psi {
        let mut curve = RocCurve {
            fixed: psi,
            points: Vec::with_capacity(grid.phi.len()),
        };
        for (k, &phi) in grid.phi.iter().enumerate() {
            let events = detect_events(&values, psi, phi, truth.total_frames)?;
            let fm = frame_level(&rasterize(&events, truth.total_frames as usize), truth)?;
            frame[k].points.push(RocPoint {
                param: psi,
                recall: fm.recall,
                x: fm.fpr,
            });
            let am = activity_level(&truth.intervals, &events, minutes, grid.min_overlap)?;
            curve.points.push(RocPoint {
                param: phi as f64,
                recall: am.recall,
                x: am.fp_per_min,
            });
        }
        activity.push(curve);
    }
    Ok(RocTables { frame, activity })
}
