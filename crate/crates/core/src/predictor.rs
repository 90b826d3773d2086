//! A bank of LSTM cells, one per grid location, predicting the next frame's
//! features.
//!
//! Per location `g` (with `r = h_prev_g * mask_g` while training):
//!
//! ```text
//! q      = W_q r + b_q                     hidden projection (H -> M)
//! u      = W_in [q ; masked_g] + b_in      input projection  (2M -> M_in)
//! z      = W_gate [u ; r] + b_gate         four gates, rows [i f o cand]
//! c      = sig(z_f) * c_prev + sig(z_i) * tanh(z_cand)
//! h      = sig(z_o) * tanh(c)
//! y'_g   = W_out h + b_out                 prediction (H -> M)
//! ```
//!
//! [`InputMode::TeacherConcat`] replaces `[q ; masked_g]` with
//! `[masked_g ; frame_g]` and drops the hidden projection.
//!
//! Cells share one parameter set unless the shape says otherwise.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Param, Parameterized, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Input projection over the projected (dropped-out) hidden state and the
    /// attention-masked features.
    Recurrent,
    /// Input projection over the masked features and the raw features.
    TeacherConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorShape {
    pub grid_len: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub input_mode: InputMode,
    pub shared: bool,
}

impl PredictorShape {
    pub fn num_cells(&self) -> usize {
        if self.shared {
            1
        } else {
            self.grid_len
        }
    }

    fn cell_for(&self, g: usize) -> usize {
        if self.shared {
            0
        } else {
            g
        }
    }
}

/// Parameters of one LSTM cell together with its projections.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub hid_proj_w: Option<Param>,
    pub hid_proj_b: Option<Param>,
    pub in_proj_w: Param,
    pub in_proj_b: Param,
    pub gate_w: Param,
    pub gate_b: Param,
    pub out_w: Param,
    pub out_b: Param,
}

impl CellParams {
    fn zeros(s: &PredictorShape) -> Self {
        let (m, h, mi) = (s.feature_dim, s.hidden_dim, s.input_dim);
        let recurrent = s.input_mode == InputMode::Recurrent;
        Self {
            hid_proj_w: recurrent.then(|| Param::zeros(m, h)),
            hid_proj_b: recurrent.then(|| Param::zeros(m, 1)),
            in_proj_w: Param::zeros(mi, 2 * m),
            in_proj_b: Param::zeros(mi, 1),
            gate_w: Param::zeros(4 * h, mi + h),
            gate_b: Param::zeros(4 * h, 1),
            out_w: Param::zeros(m, h),
            out_b: Param::zeros(m, 1),
        }
    }

    fn init<R: Rng + ?Sized>(s: &PredictorShape, scale: f64, forget_bias: f64, rng: &mut R) -> Self {
        let (m, h, mi) = (s.feature_dim, s.hidden_dim, s.input_dim);
        let recurrent = s.input_mode == InputMode::Recurrent;
        let mut gate_b = Tensor::zeros(4 * h, 1);
        gate_b.as_mut_slice()[h..2 * h].fill(forget_bias);
        Self {
            hid_proj_w: recurrent.then(|| Param::new(Tensor::uniform(m, h, scale, rng))),
            hid_proj_b: recurrent.then(|| Param::zeros(m, 1)),
            in_proj_w: Param::new(Tensor::uniform(mi, 2 * m, scale, rng)),
            in_proj_b: Param::zeros(mi, 1),
            gate_w: Param::new(Tensor::uniform(4 * h, mi + h, scale, rng)),
            gate_b: Param::new(gate_b),
            out_w: Param::new(Tensor::uniform(m, h, scale, rng)),
            out_b: Param::zeros(m, 1),
        }
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::with_capacity(8);
        v.extend(self.hid_proj_w.as_ref());
        v.extend(self.hid_proj_b.as_ref());
        v.extend([
            &self.in_proj_w,
            &self.in_proj_b,
            &self.gate_w,
            &self.gate_b,
            &self.out_w,
            &self.out_b,
        ]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::with_capacity(8);
        v.extend(self.hid_proj_w.as_mut());
        v.extend(self.hid_proj_b.as_mut());
        v.extend([
            &mut self.in_proj_w,
            &mut self.in_proj_b,
            &mut self.gate_w,
            &mut self.gate_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    shape: PredictorShape,
    pub cells: Vec<CellParams>,
}

impl LstmParams {
    pub fn zeros(shape: PredictorShape) -> Self {
        Self {
            shape,
            cells: (0..shape.num_cells()).map(|_| CellParams::zeros(&shape)).collect(),
        }
    }

    /// Weights uniform in `[-scale, scale)`, biases zero except the forget
    /// gate bias.
    pub fn init<R: Rng + ?Sized>(shape: PredictorShape, scale: f64, forget_bias: f64, rng: &mut R) -> Self {
        Self {
            shape,
            cells: (0..shape.num_cells())
                .map(|_| CellParams::init(&shape, scale, forget_bias, rng))
                .collect(),
        }
    }

    pub fn shape(&self) -> PredictorShape {
        self.shape
    }
}

impl Parameterized for LstmParams {
    fn params(&self) -> Vec<&Param> {
        self.cells.iter().flat_map(CellParams::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.cells.iter_mut().flat_map(CellParams::params_mut).collect()
    }
}

/// Gradients w.r.t. [`LstmParams`], one tensor per parameter in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGrads {
    tensors: Vec<Tensor>,
}

impl PredictorGrads {
    fn zeros_like(params: &LstmParams) -> Self {
        Self {
            tensors: params
                .params()
                .iter()
                .map(|p| {
                    let (r, c) = p.shape();
                    Tensor::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.tensors.iter().collect()
    }
}

/// Recurrent state of the whole bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h: Tensor,
    pub c: Tensor,
    pub step: u64,
}

impl PredictorState {
    pub fn zeros(grid_len: usize, hidden_dim: usize) -> Self {
        Self {
            h: Tensor::zeros(grid_len, hidden_dim),
            c: Tensor::zeros(grid_len, hidden_dim),
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.is_finite() && self.c.is_finite()
    }
}

/// Recurrent-dropout keep mask: entries are 0 or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Tensor,
}

impl DropoutMask {
    pub fn all_keep(grid_len: usize, hidden_dim: usize) -> Self {
        Self {
            keep: Tensor::filled(grid_len, hidden_dim, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(grid_len: usize, hidden_dim: usize, p: f64, rng: &mut R) -> Self {
        if p == 0.0 {
            return Self::all_keep(grid_len, hidden_dim);
        }
        let scale = 1.0 / (1.0 - p);
        let data = (0..grid_len * hidden_dim)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        Self {
            keep: Tensor::from_vec(grid_len, hidden_dim, data),
        }
    }

    /// Builds a mask from explicit entries.
    pub fn from_tensor(keep: Tensor) -> Self {
        Self { keep }
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.keep
    }
}

#[derive(Debug, Clone)]
struct LocationTape {
    r: Vec<f64>,
    concat: Vec<f64>,
    gate_in: Vec<f64>,
    /// Activated gates [i f o cand].
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Forward intermediates for [`predictor_backward`].
#[derive(Debug, Clone)]
pub struct PredictorTape {
    locations: Vec<LocationTape>,
    mask: Option<Tensor>,
    step: u64,
}

impl PredictorTape {
    /// All sigmoid gates in (0, 1) and candidates in (-1, 1).
    pub fn gates_bounded(&self) -> bool {
        self.locations.iter().all(|l| {
            let h = l.gates.len() / 4;
            l.gates[..3 * h].iter().all(|&v| (0.0..=1.0).contains(&v))
                && l.gates[3 * h..].iter().all(|&v| (-1.0..=1.0).contains(&v))
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn check_shape(what: &str, t: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if t.shape() != (rows, cols) {
        return Err(Error::Shape(format!(
            "{what}: expected {rows} x {cols}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// One step of the LSTM bank.
///
/// `masked` and `frame` are G x M. The mask is applied to the previous hidden
/// state only when `training` is set.
pub fn predictor_forward(
    params: &LstmParams,
    state: &PredictorState,
    masked: &Tensor,
    frame: &Tensor,
    mask: &DropoutMask,
    training: bool,
) -> Result<(Tensor, PredictorState, PredictorTape)> {
    let s = params.shape;
    let (g_len, m, h, mi) = (s.grid_len, s.feature_dim, s.hidden_dim, s.input_dim);
    check_shape("masked features", masked, g_len, m)?;
    check_shape("frame", frame, g_len, m)?;
    check_shape("hidden state", &state.h, g_len, h)?;
    check_shape("cell state", &state.c, g_len, h)?;
    if training {
        check_shape("dropout mask", &mask.keep, g_len, h)?;
    }

    let mut y = Tensor::zeros(g_len, m);
    let mut next = PredictorState {
        h: Tensor::zeros(g_len, h),
        c: Tensor::zeros(g_len, h),
        step: state.step + 1,
    };
    let mut locations = Vec::with_capacity(g_len);

    for g in 0..g_len {
        let cell = &params.cells[s.cell_for(g)];
        let r: Vec<f64> = if training {
            state.h.row(g).iter().zip(mask.keep.row(g)).map(|(a, b)| a * b).collect()
        } else {
            state.h.row(g).to_vec()
        };

        let mut concat = vec![0.0; 2 * m];
        match (&cell.hid_proj_w, &cell.hid_proj_b) {
            (Some(w), Some(b)) => {
                w.value.matvec(&r, &mut concat[..m]);
                for (o, bb) in concat[..m].iter_mut().zip(b.value.as_slice()) {
                    *o += bb;
                }
                concat[m..].copy_from_slice(masked.row(g));
            }
            _ => {
                concat[..m].copy_from_slice(masked.row(g));
                concat[m..].copy_from_slice(frame.row(g));
            }
        }

        let mut gate_in = vec![0.0; mi + h];
        cell.in_proj_w.value.matvec(&concat, &mut gate_in[..mi]);
        for (o, bb) in gate_in[..mi].iter_mut().zip(cell.in_proj_b.value.as_slice()) {
            *o += bb;
        }
        gate_in[mi..].copy_from_slice(&r);

        let mut gates = vec![0.0; 4 * h];
        cell.gate_w.value.matvec(&gate_in, &mut gates);
        for (k, (z, bb)) in gates.iter_mut().zip(cell.gate_b.value.as_slice()).enumerate() {
            let pre = *z + bb;
            *z = if k < 3 * h { sigmoid(pre) } else { pre.tanh() };
        }

        let c_prev = state.c.row(g).to_vec();
        let mut tanh_c = vec![0.0; h];
        {
            let c_out = &mut next.c.as_mut_slice()[g * h..(g + 1) * h];
            let h_out = &mut next.h.as_mut_slice()[g * h..(g + 1) * h];
            for k in 0..h {
                let (i, f, o, cand) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                c_out[k] = f * c_prev[k] + i * cand;
                tanh_c[k] = c_out[k].tanh();
                h_out[k] = o * tanh_c[k];
            }
        }
        let h_new = next.h.row(g).to_vec();
        let y_row = &mut y.as_mut_slice()[g * m..(g + 1) * m];
        cell.out_w.value.matvec(&h_new, y_row);
        for (o, bb) in y_row.iter_mut().zip(cell.out_b.value.as_slice()) {
            *o += bb;
        }

        locations.push(LocationTape {
            r,
            concat,
            gate_in,
            gates,
            c_prev,
            tanh_c,
            h: h_new,
        });
    }

    if !next.is_finite() {
        return Err(Error::Numeric {
            step: state.step,
            what: "predictor state".into(),
        });
    }
    if !y.is_finite() {
        return Err(Error::Numeric {
            step: state.step,
            what: "prediction".into(),
        });
    }
    let tape = PredictorTape {
        locations,
        mask: training.then(|| mask.keep.clone()),
        step: state.step,
    };
    Ok((y, next, tape))
}

/// Gradients of one predictor step.
pub struct PredictorBackward {
    pub grads: PredictorGrads,
    pub grad_h_prev: Tensor,
    pub grad_c_prev: Tensor,
    pub grad_masked: Tensor,
    pub grad_frame: Tensor,
}

/// Reverse-mode gradients of [`predictor_forward`] given upstream gradients
/// w.r.t. the prediction and the new hidden/cell states.
pub fn predictor_backward(
    params: &LstmParams,
    tape: &PredictorTape,
    grad_prediction: &Tensor,
    grad_h_next: &Tensor,
    grad_c_next: &Tensor,
) -> Result<PredictorBackward> {
    let s = params.shape;
    let (g_len, m, h, mi) = (s.grid_len, s.feature_dim, s.hidden_dim, s.input_dim);
    if tape.locations.len() != g_len
        || tape.locations.first().is_some_and(|l| l.h.len() != h || l.concat.len() != 2 * m)
    {
        return Err(Error::Contract("predictor tape does not match parameters".into()));
    }
    for (what, t, cols) in [
        ("grad_prediction", grad_prediction, m),
        ("grad_h_next", grad_h_next, h),
        ("grad_c_next", grad_c_next, h),
    ] {
        if t.shape() != (g_len, cols) {
            return Err(Error::Contract(format!(
                "{what}: expected {g_len} x {cols}, got {:?}",
                t.shape()
            )));
        }
    }

    let mut grads = PredictorGrads::zeros_like(params);
    let per_cell = params.cells[0].params().len();
    let recurrent = s.input_mode == InputMode::Recurrent;
    let mut grad_h_prev = Tensor::zeros(g_len, h);
    let mut grad_c_prev = Tensor::zeros(g_len, h);
    let mut grad_masked = Tensor::zeros(g_len, m);
    let mut grad_frame = Tensor::zeros(g_len, m);

    for g in 0..g_len {
        let cell_idx = s.cell_for(g);
        let cell = &params.cells[cell_idx];
        let lt = &tape.locations[g];
        let base = cell_idx * per_cell;
        // Parameter slots inside one cell, in `CellParams::params` order.
        let off = if recurrent { 2 } else { 0 };
        let (i_in_w, i_in_b, i_gw, i_gb, i_ow, i_ob) =
            (base + off, base + off + 1, base + off + 2, base + off + 3, base + off + 4, base + off + 5);

        let dy = grad_prediction.row(g);
        grads.tensors[i_ow].outer_acc(dy, &lt.h);
        grads.tensors[i_ob].add_slice(dy);

        let mut dh = grad_h_next.row(g).to_vec();
        cell.out_w.value.matvec_t_acc(dy, &mut dh);

        let mut dz = vec![0.0; 4 * h];
        let dc_prev = &mut grad_c_prev.as_mut_slice()[g * h..(g + 1) * h];
        for k in 0..h {
            let (i, f, o, cand) = (
                lt.gates[k],
                lt.gates[h + k],
                lt.gates[2 * h + k],
                lt.gates[3 * h + k],
            );
            let tc = lt.tanh_c[k];
            let dc = dh[k] * o * (1.0 - tc * tc) + grad_c_next.row(g)[k];
            let d_o = dh[k] * tc;
            let d_i = dc * cand;
            let d_f = dc * lt.c_prev[k];
            let d_cand = dc * i;
            dc_prev[k] = dc * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[h + k] = d_f * f * (1.0 - f);
            dz[2 * h + k] = d_o * o * (1.0 - o);
            dz[3 * h + k] = d_cand * (1.0 - cand * cand);
        }
        grads.tensors[i_gw].outer_acc(&dz, &lt.gate_in);
        grads.tensors[i_gb].add_slice(&dz);
        let mut d_gate_in = vec![0.0; mi + h];
        cell.gate_w.value.matvec_t_acc(&dz, &mut d_gate_in);
        let (du, dr_gate) = d_gate_in.split_at(mi);
        let mut dr = dr_gate.to_vec();

        grads.tensors[i_in_w].outer_acc(du, &lt.concat);
        grads.tensors[i_in_b].add_slice(du);
        let mut d_concat = vec![0.0; 2 * m];
        cell.in_proj_w.value.matvec_t_acc(du, &mut d_concat);

        if recurrent {
            let dq = &d_concat[..m];
            grads.tensors[base].outer_acc(dq, &lt.r);
            grads.tensors[base + 1].add_slice(dq);
            cell.hid_proj_w
                .as_ref()
                .expect("recurrent cell has a hidden projection")
                .value
                .matvec_t_acc(dq, &mut dr);
            grad_masked.as_mut_slice()[g * m..(g + 1) * m].copy_from_slice(&d_concat[m..]);
        } else {
            grad_masked.as_mut_slice()[g * m..(g + 1) * m].copy_from_slice(&d_concat[..m]);
            grad_frame.as_mut_slice()[g * m..(g + 1) * m].copy_from_slice(&d_concat[m..]);
        }

        let dh_prev = &mut grad_h_prev.as_mut_slice()[g * h..(g + 1) * h];
        match &tape.mask {
            Some(mask) => {
                for ((o, d), k) in dh_prev.iter_mut().zip(&dr).zip(mask.row(g)) {
                    *o = d * k;
                }
            }
            None => dh_prev.copy_from_slice(&dr),
        }
    }

    Ok(PredictorBackward {
        grads,
        grad_h_prev,
        grad_c_prev,
        grad_masked,
        grad_frame,
    })
}
