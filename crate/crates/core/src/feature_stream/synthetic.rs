//! Synthetic feature streams with known regime boundaries.
//!
//! A scenario is a list of contiguous segments, each drawing frames from a
//! per-location Gaussian around a regime mean that may drift linearly.
//! Scenario files are TOML:
//!
//! ```toml
//! frames = 1000          # total frames T
//! grid_side = 4          # N (G = N*N locations)
//! feature_dim = 16       # M
//! fps = 10               # or "30000/1001"
//! seed = 7
//! event_pad = 2          # ground-truth half-width around each boundary
//!
//! [[segments]]
//! start = 0              # inclusive
//! end = 500              # exclusive
//! label = "empty nest"   # optional
//! mean_scale = 1.0       # std of the random regime mean (ignored if `mean` is set)
//! mean_seed = 11         # optional; derived from `seed` otherwise
//! noise = 0.05           # per-value Gaussian noise std
//! drift = 0.0            # per-frame mean shift along a random direction
//! # mean = [ ... ]       # optional explicit G*M mean vector
//!
//! [[segments]]
//! start = 500
//! end = 1000
//! noise = 0.05
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureFrame, Fps, StreamHeader};
use crate::error::{Error, Result};
use crate::gating::EventInterval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_seed: Option<u64>,
    #[serde(default = "one")]
    pub mean_scale: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub drift: f64,
}

impl Default for Regime {
    fn default() -> Self {
        Self {
            label: None,
            mean: None,
            mean_seed: None,
            mean_scale: 1.0,
            noise: 0.0,
            drift: 0.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_event_pad() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    #[serde(flatten)]
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub frames: u64,
    pub grid_side: u32,
    pub feature_dim: u32,
    pub fps: Fps,
    pub seed: u64,
    #[serde(default = "default_event_pad")]
    pub event_pad: u64,
    pub segments: Vec<Segment>,
}

impl SyntheticScenario {
    /// `boundaries + 1` equal-length regimes with random means.
    pub fn evenly_spaced(
        frames: u64,
        grid_side: u32,
        feature_dim: u32,
        boundaries: usize,
        regime: Regime,
        seed: u64,
    ) -> Self {
        let parts = boundaries as u64 + 1;
        let segments = (0..parts)
            .map(|i| Segment {
                start: frames * i / parts,
                end: frames * (i + 1) / parts,
                regime: regime.clone(),
            })
            .collect();
        Self {
            frames,
            grid_side,
            feature_dim,
            fps: Fps { num: 10, den: 1 },
            seed,
            event_pad: default_event_pad(),
            segments,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn header(&self) -> Result<StreamHeader> {
        StreamHeader::new(self.grid_side, self.feature_dim, self.frames, self.fps)
    }

    pub fn validate(&self) -> Result<()> {
        self.header()?;
        if self.frames == 0 {
            return Err(Error::Config("scenario has zero frames".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::Config("scenario has no segments".into()));
        }
        let values = self.header()?.values_per_frame();
        let mut expected_start = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != expected_start {
                return Err(Error::Config(format!(
                    "segment {i} starts at {} but previous segment ended at {expected_start}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::Config(format!("segment {i} is empty")));
            }
            let r = &s.regime;
            if !(r.noise.is_finite() && r.noise >= 0.0) {
                return Err(Error::Config(format!("segment {i}: noise must be >= 0")));
            }
            if !(r.mean_scale.is_finite() && r.drift.is_finite()) {
                return Err(Error::Config(format!("segment {i}: non-finite parameter")));
            }
            if let Some(m) = &r.mean {
                if m.len() != values {
                    return Err(Error::Config(format!(
                        "segment {i}: explicit mean has {} values, expected {values}",
                        m.len()
                    )));
                }
            }
            expected_start = s.end;
        }
        if expected_start != self.frames {
            return Err(Error::Config(format!(
                "segments cover [0, {expected_start}) but the scenario has {} frames",
                self.frames
            )));
        }
        Ok(())
    }

    /// Ground-truth events: one interval around each regime boundary.
    pub fn boundary_events(&self) -> Vec<EventInterval> {
        let last = self.frames - 1;
        self.segments
            .windows(2)
            .map(|w| {
                let b = w[1].start;
                let name = |s: &Segment, fallback: usize| {
                    s.regime
                        .label
                        .clone()
                        .unwrap_or_else(|| format!("regime{fallback}"))
                };
                let idx = self.segments.iter().position(|s| s.start == b).unwrap();
                EventInterval {
                    start: b.saturating_sub(self.event_pad),
                    end: (b + self.event_pad).min(last),
                    label: Some(format!("{}->{}", name(&w[0], idx - 1), name(&w[1], idx))),
                    score: None,
                }
            })
            .collect()
    }
}

/// Seed for a regime's mean when none is given.
fn derived_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct ActiveRegime {
    end: u64,
    start: u64,
    base: Vec<f64>,
    direction: Vec<f64>,
    noise: f64,
    drift: f64,
}

/// Iterator over a scenario's frames. Holds only the current regime.
pub struct SyntheticFrames {
    scenario: SyntheticScenario,
    values: usize,
    next: u64,
    segment: usize,
    active: Option<ActiveRegime>,
    noise_rng: ChaCha8Rng,
}

impl SyntheticFrames {
    pub fn header(&self) -> StreamHeader {
        self.scenario.header().expect("validated")
    }

    fn enter(&mut self, index: usize) -> ActiveRegime {
        let seg = &self.scenario.segments[index];
        let r = &seg.regime;
        let mut rng = ChaCha8Rng::seed_from_u64(
            r.mean_seed
                .unwrap_or_else(|| derived_seed(self.scenario.seed, index)),
        );
        let base = match &r.mean {
            Some(m) => m.iter().map(|&v| v as f64).collect(),
            None => (0..self.values)
                .map(|_| r.mean_scale * { let z: f64 = StandardNormal.sample(&mut rng); z })
                .collect::<Vec<f64>>(),
        };
        let direction = if r.drift != 0.0 {
            (0..self.values)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        } else {
            vec![0.0; self.values]
        };
        ActiveRegime {
            start: seg.start,
            end: seg.end,
            base,
            direction,
            noise: r.noise,
            drift: r.drift,
        }
    }
}

impl Iterator for SyntheticFrames {
    type Item = FeatureFrame;

    fn next(&mut self) -> Option<FeatureFrame> {
        if self.next >= self.scenario.frames {
            return None;
        }
        let t = self.next;
        if self.active.as_ref().is_none_or(|a| t >= a.end) {
            if self.active.is_some() {
                self.segment += 1;
            }
            self.active = Some(self.enter(self.segment));
        }
        let a = self.active.as_ref().unwrap();
        let shift = a.drift * (t - a.start) as f64;
        let values: Vec<f32> = a
            .base
            .iter()
            .zip(&a.direction)
            .map(|(&m, &d)| {
                let eps: f64 = if a.noise > 0.0 {
                    StandardNormal.sample(&mut self.noise_rng)
                } else {
                    0.0
                };
                (m + shift * d + a.noise * eps) as f32
            })
            .collect();
        self.next += 1;
        let h = self.header();
        Some(FeatureFrame::new(t, h.grid_len(), h.feature_dim(), values).expect("finite synthetic frame"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.scenario.frames - self.next) as usize;
        (left, Some(left))
    }
}

/// Builds the frame iterator and ground-truth boundary events for a scenario.
pub fn generate_synthetic(scenario: &SyntheticScenario) -> Result<(SyntheticFrames, Vec<EventInterval>)> {
    scenario.validate()?;
    let values = scenario.header()?.values_per_frame();
    let events = scenario.boundary_events();
    let frames = SyntheticFrames {
        scenario: scenario.clone(),
        values,
        next: 0,
        segment: 0,
        active: None,
        noise_rng: ChaCha8Rng::seed_from_u64(scenario.seed),
    };
    Ok((frames, events))
}
