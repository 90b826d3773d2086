//! The attention unit and predictor bank as one trainable model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, AttentionShape};
use crate::error::{Error, Result};
use crate::predictor::{InputMode, LstmParams, PredictorShape};
use crate::tensor::{Param, Parameterized};

/// Architecture knobs. Unset widths default from the feature dimension M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width H (default M).
    pub hidden_dim: Option<usize>,
    /// LSTM input width after the input projection (default M).
    pub input_dim: Option<usize>,
    /// Attention-space width D_a (default max(1, M/8)).
    pub attn_dim: Option<usize>,
    /// Score every location against the mean hidden state.
    pub pooled_attention: bool,
    pub input_mode: InputMode,
    /// One parameter set shared by all grid cells.
    pub shared_cells: bool,
    /// Weights are drawn uniformly from `[-init_scale, init_scale)`.
    pub init_scale: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: None,
            input_dim: None,
            attn_dim: None,
            pooled_attention: false,
            input_mode: InputMode::Recurrent,
            shared_cells: true,
            init_scale: 0.05,
            forget_bias: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn attention_shape(&self, feature_dim: usize) -> AttentionShape {
        AttentionShape {
            hidden_dim: self.hidden_dim.unwrap_or(feature_dim),
            feature_dim,
            attn_dim: self.attn_dim.unwrap_or((feature_dim / 8).max(1)),
            pooled: self.pooled_attention,
        }
    }

    pub fn predictor_shape(&self, grid_len: usize, feature_dim: usize) -> PredictorShape {
        PredictorShape {
            grid_len,
            feature_dim,
            hidden_dim: self.hidden_dim.unwrap_or(feature_dim),
            input_dim: self.input_dim.unwrap_or(feature_dim),
            input_mode: self.input_mode,
            shared: self.shared_cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("input_dim", self.input_dim),
            ("attn_dim", self.attn_dim),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) || !self.forget_bias.is_finite() {
            return Err(Error::Config("initialization parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub attention: AttentionParams,
    pub predictor: LstmParams,
}

impl Model {
    /// Random initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, grid_len: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attention = AttentionParams::init(config.attention_shape(feature_dim), config.init_scale, &mut rng);
        let predictor = LstmParams::init(
            config.predictor_shape(grid_len, feature_dim),
            config.init_scale,
            config.forget_bias,
            &mut rng,
        );
        Ok(Self { attention, predictor })
    }

    pub fn zeros(config: &ModelConfig, grid_len: usize, feature_dim: usize) -> Self {
        Self {
            attention: AttentionParams::zeros(config.attention_shape(feature_dim)),
            predictor: LstmParams::zeros(config.predictor_shape(grid_len, feature_dim)),
        }
    }

    pub fn grid_len(&self) -> usize {
        self.predictor.shape().grid_len
    }

    pub fn feature_dim(&self) -> usize {
        self.predictor.shape().feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.predictor.shape().hidden_dim
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.attention.params();
        v.extend(self.predictor.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.attention.params_mut();
        v.extend(self.predictor.params_mut());
        v
    }
}
