//! Turning a loss signal into frame decisions and event intervals.
//!
//! The adaptive gate subtracts a causal trailing mean of width `n` from the
//! signal before thresholding: `e_s(t) = e(t) - mean(e(t-n+1..=t))`. During
//! warm-up (`t < n-1`) the mean covers whatever history exists. The simple
//! gate thresholds the raw signal. Both fire when the value is `>= psi`.
//!
//! Positive frames are grouped into maximal runs; runs separated by at most
//! `phi` negative frames are merged into one event.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Simple,
    #[default]
    Adaptive,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Simple => "simple",
            GateMode::Adaptive => "adaptive",
        })
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(GateMode::Simple),
            "adaptive" => Ok(GateMode::Adaptive),
            _ => Err(Error::Parse(format!("unknown gate {s:?}, expected simple or adaptive"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mode: GateMode,
    /// Threshold psi.
    pub psi: f64,
    /// Retained history m (ring-buffer length).
    pub buffer: usize,
    /// Smoothing window n.
    pub window: usize,
    pub signal: LossKind,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mode: GateMode::Adaptive,
            psi: 0.0,
            buffer: 64,
            window: 16,
            signal: LossKind::Prediction,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.psi.is_nan() {
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

    /// The gated values (smoothed or raw) and the per-sample decisions.
    pub fn apply(&self, signal: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
        self.validate()?;
        let values = match self.mode {
            GateMode::Simple => signal.to_vec(),
            GateMode::Adaptive => smooth_adaptive(signal, self.window),
        };
        let decisions = gate(&values, self.psi);
        Ok((values, decisions))
    }
}

/// An inclusive frame interval, used for detections and ground truth alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInterval {
    pub start: u64,
    pub end: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl EventInterval {
    pub fn new(start: u64, end: u64) -> Self {
        assert!(start <= end, "interval start {start} > end {end}");
        Self {
            start,
            end,
            label: None,
            score: None,
        }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of frames shared with `other`.
    pub fn overlap(&self, other: &EventInterval) -> u64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo <= hi {
            hi - lo + 1
        } else {
            0
        }
    }
}

/// Signal minus its causal trailing mean of width `n`.
///
/// # Panics
///
/// If `n == 0`.
pub fn smooth_adaptive(e: &[f64], n: usize) -> Vec<f64> {
    assert!(n >= 1, "smoothing window must be >= 1");
    (0..e.len())
        .map(|t| {
            let from = (t + 1).saturating_sub(n);
            let w = &e[from..=t];
            // Same as e[t] - mean(w), but exactly zero on flat stretches.
            w.iter().map(|&x| e[t] - x).sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// `true` where the value is at least `psi`.
pub fn gate(values: &[f64], psi: f64) -> Vec<bool> {
    values.iter().map(|&v| v >= psi).collect()
}

/// Maximal runs of positives, merged across gaps of at most `phi` frames.
pub fn extract_events(binary: &[bool], phi: u64) -> Vec<EventInterval> {
    let mut out: Vec<EventInterval> = Vec::new();
    let mut t = 0;
    while t < binary.len() {
        if !binary[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < binary.len() && binary[t] {
            t += 1;
        }
        let (s, e) = (start as u64, t as u64 - 1);
        match out.last_mut() {
            Some(last) if s - last.end - 1 <= phi => last.end = e,
            _ => out.push(EventInterval::new(s, e)),
        }
    }
    out
}

/// Like [`extract_events`], with each interval scored by the largest value
/// inside it.
pub fn extract_scored_events(binary: &[bool], values: &[f64], phi: u64) -> Vec<EventInterval> {
    assert_eq!(binary.len(), values.len(), "decisions and values differ in length");
    let mut events = extract_events(binary, phi);
    for ev in events.iter_mut() {
        let peak = values[ev.start as usize..=ev.end as usize]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        ev.score = Some(peak);
    }
    events
}

/// Frame mask covered by `intervals`, clipped to `total_frames`.
pub fn rasterize(intervals: &[EventInterval], total_frames: usize) -> Vec<bool> {
    let mut out = vec![false; total_frames];
    for iv in intervals {
        let lo = iv.start as usize;
        let hi = (iv.end as usize).min(total_frames.saturating_sub(1));
        if lo < total_frames {
            out[lo..=hi].iter_mut().for_each(|b| *b = true);
        }
    }
    out
}

/// Maps per-sample values (sample `t` compares frames `t` and `t+1`) onto
/// frames: the value lands on frame `t+1`, the frame that was mispredicted,
/// and frame 0 gets `fill`.
pub fn align_to_frames<T: Copy>(per_sample: &[T], fill: T) -> Vec<T> {
    std::iter::once(fill).chain(per_sample.iter().copied()).collect()
}

/// Incremental gate for live use: push one loss value, get one decision.
#[derive(Debug, Clone)]
pub struct OnlineGate {
    config: GateConfig,
    history: VecDeque<f64>,
}

impl OnlineGate {
    pub fn new(config: GateConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            history: VecDeque::with_capacity(config.buffer.max(1)),
            config,
        })
    }

    /// Returns the gated value and whether it fires.
    pub fn push(&mut self, e: f64) -> (f64, bool) {
        let value = match self.config.mode {
            GateMode::Simple => e,
            GateMode::Adaptive => {
                if self.history.len() == self.config.buffer {
                    self.history.pop_front();
                }
                self.history.push_back(e);
                let n = self.config.window.min(self.history.len());
                let from = self.history.len() - n;
                let sum: f64 = self.history.range(from..).map(|&x| e - x).sum();
                sum / n as f64
            }
        };
        (value, value >= self.config.psi)
    }
}
