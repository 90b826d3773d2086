//! Online, self-supervised temporal event segmentation.
//!
//! A stream of encoded frames (a grid of feature vectors per frame) drives an
//! attention-gated bank of LSTM cells that learns, one gradient step per
//! frame, to predict the next frame's features. The prediction error is a
//! surprise signal: gating it yields event boundaries, which are scored
//! against annotations at frame and activity level.
//!
//! The pieces, in pipeline order:
//!
//! * [`feature_stream`]: the binary frame container and a synthetic generator
//! * [`attention`]: additive spatial attention with exact gradients
//! * [`predictor`]: the LSTM bank with recurrent dropout
//! * [`losses`]: prediction and motion-weighted losses
//! * [`trainer`]: the single-pass online loop and Adam
//! * [`gating`]: simple and adaptive thresholds, event extraction
//! * [`evaluation`]: frame/activity metrics, Hungarian matching, ROC sweeps
//!
//! ```
//! use evseg::feature_stream::{generate_synthetic, Regime, SyntheticScenario};
//! use evseg::trainer::{run_stream, NullSink, RunOptions, TrainerConfig};
//!
//! let scenario = SyntheticScenario::evenly_spaced(50, 2, 4, 1, Regime::default(), 1);
//! let (frames, truth) = generate_synthetic(&scenario).unwrap();
//! let config = TrainerConfig { learning_rate: 1e-3, ..TrainerConfig::default() };
//! let model = config.init_model(4, 4).unwrap();
//! let out = run_stream(&config, model, frames.map(Ok), NullSink, RunOptions::default()).unwrap();
//! assert_eq!(out.losses.len(), 49);
//! assert_eq!(truth.len(), 1);
//! ```

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod feature_stream;
pub mod gating;
pub mod io;
pub mod losses;
pub mod model;
pub mod optim;
pub mod predictor;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/feature-streams.md")]
    mod feature_streams {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/online-training.md")]
    mod online_training {}
    #[doc = include_str!("../../../book/src/gating.md")]
    mod gating {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
