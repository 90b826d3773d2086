//! Layered settings: defaults, then the `--config` file, then flags.
//!
//! ```toml
//! [trainer]
//! learning_rate = 1e-3
//! dropout = 0.4
//! [trainer.model]
//! hidden_dim = 16
//!
//! [run]
//! parallel = 4
//!
//! [gate]
//! mode = "adaptive"
//! psi = [0.5, 1.0]
//! phi = [0, 5]
//!
//! [eval]
//! fps = "30000/1001"
//! ```

use std::path::{Path, PathBuf};

use evseg::feature_stream::Fps;
use evseg::gating::GateMode;
use evseg::losses::LossKind;
use evseg::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub trainer: TrainerConfig,
    pub run: RunSettings,
    pub gate: GateSettings,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Worker cap; `None` means one worker per input.
    pub parallel: Option<usize>,
    pub attention: bool,
    pub attention_png: bool,
    /// Pixels per grid cell in attention PNGs.
    pub png_scale: u32,
    pub plot: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            parallel: None,
            attention: false,
            attention_png: false,
            png_scale: 8,
            plot: false,
        }
    }
}

/// Quantiles of the gated signal used when no `psi` is given.
pub const DEFAULT_PSI_QUANTILES: [f64; 8] = [0.5, 0.75, 0.9, 0.95, 0.975, 0.99, 0.995, 0.999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSettings {
    pub signal: LossKind,
    pub mode: GateMode,
    /// Empty means quantiles of the gated signal.
    pub psi: Vec<f64>,
    pub phi: Vec<u64>,
    /// Smoothing window n.
    pub window: usize,
    /// History length m.
    pub buffer: usize,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            signal: LossKind::Prediction,
            mode: GateMode::Adaptive,
            psi: Vec::new(),
            phi: vec![0],
            window: 16,
            buffer: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub fps: Option<Fps>,
    pub pad: u64,
    pub min_overlap: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            fps: None,
            pad: 0,
            min_overlap: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// Full scenario file; when set, only `seed` and `fps` below apply.
    pub scenario: Option<PathBuf>,
    pub frames: u64,
    pub grid_side: u32,
    pub feature_dim: u32,
    pub boundaries: usize,
    pub noise: f64,
    pub drift: f64,
    pub mean_scale: f64,
    pub seed: Option<u64>,
    pub fps: Option<Fps>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            scenario: None,
            frames: 1000,
            grid_side: 2,
            feature_dim: 8,
            boundaries: 4,
            noise: 0.1,
            drift: 0.0,
            mean_scale: 1.0,
            seed: None,
            fps: None,
        }
    }
}
