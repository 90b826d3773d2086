//! Additive (Bahdanau-style) spatial attention over grid locations.
//!
//! For each location `g` with hidden vector `h_g` and feature vector `x_g`:
//!
//! ```text
//! a_g     = W_h h_g + W_x x_g + b        (attention space, width D_a)
//! score_g = v . tanh(a_g)
//! w       = softmax(score)               (over the G locations)
//! masked_g = w_g * x_g
//! ```
//!
//! The two inner fully connected layers would each carry a bias; their sum
//! is a single bias `b`, so only one is stored.
//!
//! With `pooled = true` every location is scored against the mean hidden
//! vector instead of its own cell's hidden vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, Param, Parameterized, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    /// Width of the hidden vectors scored against (H).
    pub hidden_dim: usize,
    /// Width of the feature vectors (M).
    pub feature_dim: usize,
    /// Attention-space width (D_a).
    pub attn_dim: usize,
    pub pooled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_h: Param,
    pub w_x: Param,
    pub bias: Param,
    pub v: Param,
    pub pooled: bool,
}

impl AttentionParams {
    pub fn zeros(shape: AttentionShape) -> Self {
        Self {
            w_h: Param::zeros(shape.attn_dim, shape.hidden_dim),
            w_x: Param::zeros(shape.attn_dim, shape.feature_dim),
            bias: Param::zeros(shape.attn_dim, 1),
            v: Param::zeros(shape.attn_dim, 1),
            pooled: shape.pooled,
        }
    }

    /// Weights uniform in `[-scale, scale)`, bias zero.
    pub fn init<R: Rng + ?Sized>(shape: AttentionShape, scale: f64, rng: &mut R) -> Self {
        Self {
            w_h: Param::new(Tensor::uniform(shape.attn_dim, shape.hidden_dim, scale, rng)),
            w_x: Param::new(Tensor::uniform(shape.attn_dim, shape.feature_dim, scale, rng)),
            bias: Param::zeros(shape.attn_dim, 1),
            v: Param::new(Tensor::uniform(shape.attn_dim, 1, scale, rng)),
            pooled: shape.pooled,
        }
    }

    pub fn shape(&self) -> AttentionShape {
        AttentionShape {
            hidden_dim: self.w_h.value.cols(),
            feature_dim: self.w_x.value.cols(),
            attn_dim: self.w_x.value.rows(),
            pooled: self.pooled,
        }
    }
}

impl Parameterized for AttentionParams {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_h, &self.w_x, &self.bias, &self.v]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_h, &mut self.w_x, &mut self.bias, &mut self.v]
    }
}

/// Gradients w.r.t. [`AttentionParams`], in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w_h: Tensor,
    pub w_x: Tensor,
    pub bias: Tensor,
    pub v: Tensor,
}

impl AttentionGrads {
    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_h, &self.w_x, &self.bias, &self.v]
    }
}

/// Per-location attention weights; non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    weights: Vec<f64>,
}

impl AttentionMap {
    pub fn uniform(grid_len: usize) -> Self {
        Self {
            weights: vec![1.0 / grid_len as f64; grid_len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights min-max rescaled to `0..=255`. A constant map is all zeros.
    pub fn to_gray(&self) -> Vec<u8> {
        let lo = self.weights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.weights
            .iter()
            .map(|&w| {
                if span > 0.0 {
                    ((w - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Forward intermediates needed by [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionTape {
    /// Hidden vectors actually scored: G rows, or one pooled row.
    hidden: Tensor,
    features: Tensor,
    /// tanh(a_g), G x D_a.
    activ: Tensor,
    weights: Vec<f64>,
}

impl AttentionTape {
    pub fn grid_len(&self) -> usize {
        self.features.rows()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The frame features the forward pass consumed.
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

fn check_inputs(params: &AttentionParams, h_prev: &Tensor, x: &Tensor) -> Result<()> {
    let s = params.shape();
    if x.cols() != s.feature_dim || x.rows() == 0 {
        return Err(Error::Shape(format!(
            "attention expects G x {} features, got {:?}",
            s.feature_dim,
            x.shape()
        )));
    }
    if h_prev.shape() != (x.rows(), s.hidden_dim) {
        return Err(Error::Shape(format!(
            "attention expects {} x {} hidden states, got {:?}",
            x.rows(),
            s.hidden_dim,
            h_prev.shape()
        )));
    }
    Ok(())
}

fn mean_rows(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        out.add_slice(t.row(r));
    }
    let n = t.rows() as f64;
    out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    out
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scores each location, normalizes with softmax and masks the features.
///
/// `h_prev` is G x H, `x` is G x M. Returns the attention map, the masked
/// features (G x M) and the tape for the backward pass.
pub fn attention_forward(
    params: &AttentionParams,
    h_prev: &Tensor,
    x: &Tensor,
) -> Result<(AttentionMap, Tensor, AttentionTape)> {
    check_inputs(params, h_prev, x)?;
    let g_len = x.rows();
    let d_a = params.shape().attn_dim;
    let hidden = if params.pooled {
        mean_rows(h_prev)
    } else {
        h_prev.clone()
    };

    let mut activ = Tensor::zeros(g_len, d_a);
    let mut scores = vec![0.0; g_len];
    let mut from_h = vec![0.0; d_a];
    let mut from_x = vec![0.0; d_a];
    if params.pooled {
        params.w_h.value.matvec(hidden.row(0), &mut from_h);
    }
    for (g, score) in scores.iter_mut().enumerate() {
        if !params.pooled {
            params.w_h.value.matvec(hidden.row(g), &mut from_h);
        }
        params.w_x.value.matvec(x.row(g), &mut from_x);
        let row = &mut activ.as_mut_slice()[g * d_a..(g + 1) * d_a];
        for (k, a) in row.iter_mut().enumerate() {
            *a = (from_h[k] + from_x[k] + params.bias.value.as_slice()[k]).tanh();
        }
        *score = dot(row, params.v.value.as_slice());
        if !score.is_finite() {
            return Err(Error::NonFinite {
                what: "attention score",
                location: g,
            });
        }
    }

    let weights = softmax(&scores);
    let mut masked = x.clone();
    for (g, &w) in weights.iter().enumerate() {
        let m = masked.cols();
        masked.as_mut_slice()[g * m..(g + 1) * m]
            .iter_mut()
            .for_each(|v| *v *= w);
    }
    let map = AttentionMap {
        weights: weights.clone(),
    };
    let tape = AttentionTape {
        hidden,
        features: x.clone(),
        activ,
        weights,
    };
    Ok((map, masked, tape))
}

/// Reverse-mode gradients of [`attention_forward`].
///
/// `grad_masked` is the upstream gradient w.r.t. the masked features (G x M);
/// `grad_weights_extra` is any additional upstream gradient w.r.t. the
/// attention weights themselves (G entries, usually zeros).
///
/// Returns parameter gradients, the gradient w.r.t. `h_prev` (G x H) and the
/// gradient w.r.t. the frame features (G x M).
pub fn attention_backward(
    params: &AttentionParams,
    tape: &AttentionTape,
    grad_masked: &Tensor,
    grad_weights_extra: &[f64],
) -> Result<(AttentionGrads, Tensor, Tensor)> {
    let s = params.shape();
    let g_len = tape.grid_len();
    if grad_masked.shape() != tape.features.shape() || grad_weights_extra.len() != g_len {
        return Err(Error::Contract(format!(
            "attention backward: tape is {:?}, got grad_masked {:?} and {} weight grads",
            tape.features.shape(),
            grad_masked.shape(),
            grad_weights_extra.len()
        )));
    }
    if tape.activ.cols() != s.attn_dim || tape.hidden.cols() != s.hidden_dim {
        return Err(Error::Contract("attention tape does not match parameters".into()));
    }

    let w = &tape.weights;
    // dL/dw_g, then through softmax: ds_g = w_g (dw_g - sum_k w_k dw_k)
    let dw: Vec<f64> = (0..g_len)
        .map(|g| dot(grad_masked.row(g), tape.features.row(g)) + grad_weights_extra[g])
        .collect();
    let mean_dw: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();

    let mut grads = AttentionGrads {
        w_h: Tensor::zeros(s.attn_dim, s.hidden_dim),
        w_x: Tensor::zeros(s.attn_dim, s.feature_dim),
        bias: Tensor::vector(s.attn_dim),
        v: Tensor::vector(s.attn_dim),
    };
    let mut grad_frame = Tensor::zeros(g_len, s.feature_dim);
    let mut grad_h = Tensor::zeros(g_len, s.hidden_dim);
    let mut pooled_da = vec![0.0; s.attn_dim];
    let mut da = vec![0.0; s.attn_dim];
    let v = params.v.value.as_slice();

    for g in 0..g_len {
        let m = s.feature_dim;
        let gf = &mut grad_frame.as_mut_slice()[g * m..(g + 1) * m];
        for (o, &u) in gf.iter_mut().zip(grad_masked.row(g)) {
            *o = w[g] * u;
        }
        let ds = w[g] * (dw[g] - mean_dw);
        if ds == 0.0 {
            continue;
        }
        let z = tape.activ.row(g);
        for k in 0..s.attn_dim {
            grads.v.as_mut_slice()[k] += ds * z[k];
            da[k] = ds * v[k] * (1.0 - z[k] * z[k]);
        }
        grads.bias.add_slice(&da);
        grads.w_x.outer_acc(&da, tape.features.row(g));
        params.w_x.value.matvec_t_acc(&da, gf);
        if params.pooled {
            for (p, d) in pooled_da.iter_mut().zip(&da) {
                *p += d;
            }
        } else {
            grads.w_h.outer_acc(&da, tape.hidden.row(g));
            let h = s.hidden_dim;
            params
                .w_h
                .value
                .matvec_t_acc(&da, &mut grad_h.as_mut_slice()[g * h..(g + 1) * h]);
        }
    }

    if params.pooled {
        grads.w_h.outer_acc(&pooled_da, tape.hidden.row(0));
        let mut gm = vec![0.0; s.hidden_dim];
        params.w_h.value.matvec_t_acc(&pooled_da, &mut gm);
        let inv = 1.0 / g_len as f64;
        for g in 0..g_len {
            let h = s.hidden_dim;
            for (o, d) in grad_h.as_mut_slice()[g * h..(g + 1) * h].iter_mut().zip(&gm) {
                *o = d * inv;
            }
        }
    }

    Ok((grads, grad_h, grad_frame))
}
