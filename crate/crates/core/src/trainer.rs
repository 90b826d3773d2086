//! The single-pass online loop.
//!
//! Every incoming frame `t+1` completes one step for frame `t`: attention and
//! predictor forward on frame `t`, both losses against frame `t+1`, backward
//! through the configured training loss, one Adam update, then the recurrent
//! state advances. Frames are dropped as soon as no pending step needs them.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_backward, attention_forward, AttentionMap, AttentionTape};
use crate::checkpoint::{Checkpoint, RngPosition};
use crate::error::{Error, Result};
use crate::feature_stream::FeatureFrame;
use crate::losses::{motion_weighted_loss, prediction_loss, LossKind, LossSample, Reduction};
use crate::model::{Model, ModelConfig};
use crate::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::predictor::{predictor_backward, predictor_forward, DropoutMask, PredictorState, PredictorTape};
use crate::tensor::{Parameterized, Tensor};

const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Recurrent dropout rate p.
    pub dropout: f64,
    pub training_loss: LossKind,
    pub reduction: Reduction,
    /// Number of steps gradients flow back through (1 = stop at h_{t-1}).
    pub bptt_window: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    /// Skip backward and update entirely; forward runs without dropout.
    pub frozen: bool,
    pub model: ModelConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            dropout: 0.4,
            training_loss: LossKind::Prediction,
            reduction: Reduction::Sum,
            bptt_window: 1,
            seed: 0,
            grad_clip: None,
            frozen: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.bptt_window == 0 {
            return Err(Error::Config("bptt_window must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be > 0".into()));
            }
        }
        self.model.validate()
    }

    /// The model this configuration initializes for a stream shape.
    pub fn init_model(&self, grid_len: usize, feature_dim: usize) -> Result<Model> {
        Model::init(&self.model, grid_len, feature_dim, self.seed)
    }
}

/// Result of one completed step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub sample: LossSample,
    pub attention: AttentionMap,
}

struct WindowEntry {
    attention: AttentionTape,
    predictor: PredictorTape,
}

struct Pending {
    index: u64,
    features: Tensor,
}

/// Push-based online trainer for one stream.
pub struct OnlineTrainer {
    config: TrainerConfig,
    model: Model,
    state: PredictorState,
    adam: Adam,
    rng: ChaCha8Rng,
    pending: Option<Pending>,
    window: VecDeque<WindowEntry>,
    peak_retained: usize,
}

impl OnlineTrainer {
    pub fn new(config: TrainerConfig, model: Model) -> Result<Self> {
        config.validate()?;
        let state = PredictorState::zeros(model.grid_len(), model.hidden_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DROPOUT_STREAM);
        Ok(Self {
            adam: Adam::new(config.adam()),
            config,
            model,
            state,
            rng,
            pending: None,
            window: VecDeque::new(),
            peak_retained: 0,
        })
    }

    /// Resumes from a checkpoint. The next pushed frame must be the one at
    /// `checkpoint.next_frame`; it starts a new pending step.
    pub fn from_checkpoint(config: TrainerConfig, checkpoint: Checkpoint) -> Result<Self> {
        let mut t = Self::new(config, checkpoint.model)?;
        t.state = checkpoint.state;
        t.adam.step = checkpoint.adam_step;
        t.rng = ChaCha8Rng::from_seed(checkpoint.rng.seed);
        t.rng.set_stream(checkpoint.rng.stream);
        t.rng.set_word_pos(checkpoint.rng.word_pos);
        Ok(t)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &PredictorState {
        &self.state
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// Frames currently held (pending frame plus frames inside window tapes).
    pub fn retained_frames(&self) -> usize {
        self.pending.is_some() as usize + self.window.len()
    }

    /// Most frames held at once so far, counting the frame being pushed.
    pub fn peak_retained_frames(&self) -> usize {
        self.peak_retained
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            state: self.state.clone(),
            adam_step: self.adam.step,
            next_frame: self.pending.as_ref().map_or(self.state.step, |p| p.index),
            rng: RngPosition {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    /// Feeds the next frame. Returns the completed step for the previous
    /// frame, if there was one. On error nothing observable changes.
    pub fn push(&mut self, frame: FeatureFrame) -> Result<Option<StepOutput>> {
        let (g, m) = (self.model.grid_len(), self.model.feature_dim());
        if frame.grid_len() != g || frame.feature_dim() != m {
            return Err(Error::Shape(format!(
                "frame {} is {}x{}, model expects {g}x{m}",
                frame.index,
                frame.grid_len(),
                frame.feature_dim()
            )));
        }
        if let Some(p) = &self.pending {
            if frame.index != p.index + 1 {
                return Err(Error::Contract(format!(
                    "frame {} follows frame {}",
                    frame.index, p.index
                )));
            }
        }
        let next = Tensor::from_vec(g, m, frame.to_f64());
        let index = frame.index;
        drop(frame);
        self.peak_retained = self.peak_retained.max(self.retained_frames() + 1);

        let out = match self.pending.take() {
            Some(cur) => match self.step(&cur, &next) {
                Ok(o) => Some(o),
                Err(e) => {
                    self.pending = Some(cur);
                    return Err(e);
                }
            },
            None => None,
        };
        self.pending = Some(Pending {
            index,
            features: next,
        });
        Ok(out)
    }

    fn step(&mut self, cur: &Pending, next: &Tensor) -> Result<StepOutput> {
        let t = cur.index;
        let training = !self.config.frozen;
        let (g, h) = (self.model.grid_len(), self.model.hidden_dim());
        let diverged = |reason: String| Error::Diverged { step: t, reason };

        let (map, masked, att_tape) =
            attention_forward(&self.model.attention, &self.state.h, &cur.features).map_err(|e| diverged(e.to_string()))?;
        let rng_before = self.rng.clone();
        let mask = if training {
            DropoutMask::sample(g, h, self.config.dropout, &mut self.rng)
        } else {
            DropoutMask::all_keep(g, h)
        };
        let fwd = predictor_forward(&self.model.predictor, &self.state, &masked, &cur.features, &mask, training);
        let (y, new_state, p_tape) = match fwd {
            Ok(v) => v,
            Err(e) => {
                self.rng = rng_before;
                return Err(diverged(e.to_string()));
            }
        };

        let red = self.config.reduction;
        let (pred_loss, pred_grad) = prediction_loss(&y, next, red)?;
        let (mw_loss, mw_grad) = motion_weighted_loss(&y, &cur.features, next, red)?;
        if !pred_loss.is_finite() || !mw_loss.is_finite() {
            self.rng = rng_before;
            return Err(diverged(format!("loss is not finite (pred {pred_loss}, mw {mw_loss})")));
        }

        if training {
            let grad_y = match self.config.training_loss {
                LossKind::Prediction => pred_grad,
                LossKind::MotionWeighted => mw_grad,
            };
            if let Err(e) = self.backward_and_update(grad_y, &att_tape, &p_tape) {
                self.rng = rng_before;
                return Err(diverged(e.to_string()));
            }
            if self.config.bptt_window > 1 {
                self.window.push_back(WindowEntry {
                    attention: att_tape,
                    predictor: p_tape,
                });
                while self.window.len() > self.config.bptt_window - 1 {
                    self.window.pop_front();
                }
            }
        }
        self.state = new_state;

        Ok(StepOutput {
            sample: LossSample {
                t,
                pred_loss,
                mw_loss,
            },
            attention: map,
        })
    }

    fn backward_and_update(&mut self, grad_y: Tensor, att_tape: &AttentionTape, p_tape: &PredictorTape) -> Result<()> {
        let (g, h) = (self.model.grid_len(), self.model.hidden_dim());
        self.model.zero_grads();
        let zeros_h = Tensor::zeros(g, h);
        let zero_w = vec![0.0; g];

        let mut back = predictor_backward(&self.model.predictor, p_tape, &grad_y, &zeros_h, &zeros_h)?;
        self.model.predictor.accumulate_grads(&back.grads.tensors());
        let (ag, mut dh, _) = attention_backward(&self.model.attention, att_tape, &back.grad_masked, &zero_w)?;
        self.model.attention.accumulate_grads(&ag.tensors());

        // Older steps inside the truncation window, newest first.
        let zero_y = Tensor::zeros(g, self.model.feature_dim());
        for entry in self.window.iter().rev() {
            dh.add_assign(&back.grad_h_prev);
            let dc = back.grad_c_prev;
            back = predictor_backward(&self.model.predictor, &entry.predictor, &zero_y, &dh, &dc)?;
            self.model.predictor.accumulate_grads(&back.grads.tensors());
            let (ag, dh_att, _) = attention_backward(&self.model.attention, &entry.attention, &back.grad_masked, &zero_w)?;
            self.model.attention.accumulate_grads(&ag.tensors());
            dh = dh_att;
        }

        if let Some(c) = self.config.grad_clip {
            clip_grad_norm(self.model.params_mut(), c);
        }
        self.adam.step(self.model.params_mut())
    }
}

/// Receives per-step traces as they are produced.
pub trait TraceSink {
    fn loss(&mut self, sample: &LossSample) -> Result<()>;

    fn attention(&mut self, _t: u64, _map: &AttentionMap) -> Result<()> {
        Ok(())
    }

    /// Called once when a run ends, successfully or not.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn loss(&mut self, _sample: &LossSample) -> Result<()> {
        Ok(())
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn loss(&mut self, sample: &LossSample) -> Result<()> {
        (**self).loss(sample)
    }

    fn attention(&mut self, t: u64, map: &AttentionMap) -> Result<()> {
        (**self).attention(t, map)
    }

    fn flush(&mut self) -> Result<()> {
        (**self).flush()
    }
}

/// What [`run_stream`] keeps in memory besides feeding the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub retain_losses: bool,
    pub retain_attention: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            retain_losses: true,
            retain_attention: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub losses: Vec<LossSample>,
    pub attention: Option<Vec<AttentionMap>>,
    pub checkpoint: Checkpoint,
    pub frames_seen: u64,
    pub peak_retained_frames: usize,
}

/// A run that stopped early. `checkpoint` is the last finite model state.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub frames_seen: u64,
    pub checkpoint: Option<Box<Checkpoint>>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} frames)", self.error, self.frames_seen)
    }
}

impl std::error::Error for RunFailure {}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            frames_seen: 0,
            checkpoint: None,
        }
    }
}

/// Trains online over a whole stream in one pass.
pub fn run_stream<I, S>(
    config: &TrainerConfig,
    model: Model,
    frames: I,
    mut sink: S,
    options: RunOptions,
) -> std::result::Result<RunOutputs, RunFailure>
where
    I: IntoIterator<Item = Result<FeatureFrame>>,
    S: TraceSink,
{
    let mut trainer = OnlineTrainer::new(config.clone(), model)?;
    let mut losses = Vec::new();
    let mut attention = options.retain_attention.then(Vec::new);
    let mut seen = 0u64;
    let fail = |error: Error, trainer: &OnlineTrainer, seen: u64| RunFailure {
        error,
        frames_seen: seen,
        checkpoint: Some(Box::new(trainer.checkpoint())),
    };

    let drive = || -> std::result::Result<(), RunFailure> {
        for frame in frames {
            let frame = frame.map_err(|e| fail(e, &trainer, seen))?;
            let out = trainer.push(frame).map_err(|e| fail(e, &trainer, seen))?;
            seen += 1;
            if let Some(out) = out {
                sink.loss(&out.sample).map_err(|e| fail(e, &trainer, seen))?;
                sink.attention(out.sample.t, &out.attention)
                    .map_err(|e| fail(e, &trainer, seen))?;
                if options.retain_losses {
                    losses.push(out.sample);
                }
                if let Some(a) = attention.as_mut() {
                    a.push(out.attention);
                }
            }
        }
        Ok(())
    };
    let driven = drive();
    // Keep whatever made it into the sink, even after a failure.
    let flushed = sink.flush();
    driven?;
    flushed.map_err(|e| fail(e, &trainer, seen))?;
    if seen < 2 {
        return Err(fail(
            Error::Contract(format!("a run needs at least 2 frames, got {seen}")),
            &trainer,
            seen,
        ));
    }
    Ok(RunOutputs {
        losses,
        attention,
        checkpoint: trainer.checkpoint(),
        frames_seen: seen,
        peak_retained_frames: trainer.peak_retained_frames(),
    })
}

/// Runs independent model copies over several streams, at most `threads` at
/// a time. Results keep the input order; one failure does not stop others.
pub fn run_parallel<I, S, F>(
    config: &TrainerConfig,
    model: &Model,
    streams: Vec<I>,
    threads: usize,
    make_sink: F,
    options: RunOptions,
) -> Vec<std::result::Result<RunOutputs, RunFailure>>
where
    I: IntoIterator<Item = Result<FeatureFrame>> + Send,
    S: TraceSink,
    F: Fn(usize) -> Result<S> + Sync,
{
    let n = streams.len();
    let slots: Vec<Mutex<Option<I>>> = streams.into_iter().map(|s| Mutex::new(Some(s))).collect();
    let results: Vec<Mutex<Option<std::result::Result<RunOutputs, RunFailure>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let stream = slots[i].lock().unwrap().take().expect("stream taken once");
                let result = make_sink(i)
                    .map_err(RunFailure::from)
                    .and_then(|sink| run_stream(config, model.clone(), stream, sink, options));
                *results[i].lock().unwrap() = Some(result);
            });
        }
    });

    results
        .into_iter()
        .map(|r| r.into_inner().unwrap().expect("every stream ran"))
        .collect()
}
