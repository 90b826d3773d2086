//! Self-supervised losses between the prediction `y'_t` and the next frame.
//!
//! * prediction loss: `sum (next - y)^2`
//! * motion-weighted loss: `sum ((next - y)^2 * (next - cur)^2)^2`
//!
//! The motion-weighted loss is the squared norm of an already squared
//! Hadamard product, so it grows with the fourth power of the prediction
//! error. Expect a very wide dynamic range.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain sum over all G*M entries.
    #[default]
    Sum,
    /// Sum divided by G*M.
    Mean,
}

/// Which loss signal is meant: for training, for gating, or for export.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[default]
    #[serde(rename = "pred")]
    Prediction,
    #[serde(rename = "mw")]
    MotionWeighted,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Prediction => "pred",
            LossKind::MotionWeighted => "mw",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred" | "prediction" => Ok(LossKind::Prediction),
            "mw" | "motion_weighted" => Ok(LossKind::MotionWeighted),
            _ => Err(Error::Parse(format!("unknown loss {s:?}, expected pred or mw"))),
        }
    }
}

/// Both losses for the prediction made at frame `t` (compared with `t+1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub t: u64,
    pub pred_loss: f64,
    pub mw_loss: f64,
}

impl LossSample {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Prediction => self.pred_loss,
            LossKind::MotionWeighted => self.mw_loss,
        }
    }
}

fn check(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn reduce(loss: f64, mut grad: Tensor, reduction: Reduction) -> (f64, Tensor) {
    match reduction {
        Reduction::Sum => (loss, grad),
        Reduction::Mean => {
            let n = grad.len() as f64;
            grad.as_mut_slice().iter_mut().for_each(|g| *g /= n);
            (loss / n, grad)
        }
    }
}

/// Squared L2 distance and its gradient w.r.t. `y_pred`.
pub fn prediction_loss(y_pred: &Tensor, next: &Tensor, reduction: Reduction) -> Result<(f64, Tensor)> {
    check(y_pred, next)?;
    let mut grad = Tensor::zeros(y_pred.rows(), y_pred.cols());
    let mut loss = 0.0;
    for ((g, &y), &n) in grad.as_mut_slice().iter_mut().zip(y_pred.as_slice()).zip(next.as_slice()) {
        let d = n - y;
        loss += d * d;
        *g = -2.0 * d;
    }
    Ok(reduce(loss, grad, reduction))
}

/// Motion-weighted loss and its gradient w.r.t. `y_pred` (frames held fixed).
pub fn motion_weighted_loss(
    y_pred: &Tensor,
    cur: &Tensor,
    next: &Tensor,
    reduction: Reduction,
) -> Result<(f64, Tensor)> {
    check(y_pred, next)?;
    check(cur, next)?;
    let mut grad = Tensor::zeros(y_pred.rows(), y_pred.cols());
    let mut loss = 0.0;
    let entries = y_pred.as_slice().iter().zip(cur.as_slice()).zip(next.as_slice());
    for (g, ((&y, &c), &n)) in grad.as_mut_slice().iter_mut().zip(entries) {
        let d = n - y;
        let motion = (n - c) * (n - c);
        let e = d * d * motion;
        loss += e * e;
        // d/dy (d^4 motion^2) = -4 d^3 motion^2
        *g = -4.0 * d * d * d * motion * motion;
    }
    Ok(reduce(loss, grad, reduction))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(1, v.len(), v.to_vec())
    }

    #[test]
    fn identical_prediction_has_zero_loss() {
        let a = t(&[1.0, -2.0, 3.5]);
        let (l, g) = prediction_loss(&a, &a, Reduction::Sum).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_prediction_against_ones() {
        let y = Tensor::zeros(2, 3);
        let n = Tensor::filled(2, 3, 1.0);
        assert_eq!(prediction_loss(&y, &n, Reduction::Sum).unwrap().0, 6.0);
        assert_eq!(prediction_loss(&y, &n, Reduction::Mean).unwrap().0, 1.0);
    }

    #[test]
    fn no_motion_means_no_motion_weighted_loss() {
        let y = t(&[5.0, -1.0, 0.3]);
        let c = t(&[0.2, 0.4, 0.6]);
        let (l, g) = motion_weighted_loss(&y, &c, &c, Reduction::Sum).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_entries_motion_weighted() {
        let n = Tensor::filled(2, 2, 2.0);
        let y = Tensor::filled(2, 2, 1.0);
        let c = Tensor::filled(2, 2, 1.0);
        assert_eq!(motion_weighted_loss(&y, &c, &n, Reduction::Sum).unwrap().0, 4.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(3, 2);
        assert!(matches!(prediction_loss(&a, &b, Reduction::Sum), Err(Error::Contract(_))));
        assert!(matches!(motion_weighted_loss(&a, &a, &b, Reduction::Sum), Err(Error::Contract(_))));
    }

    #[test]
    fn loss_kind_names() {
        assert_eq!("pred".parse::<LossKind>().unwrap(), LossKind::Prediction);
        assert_eq!("mw".parse::<LossKind>().unwrap(), LossKind::MotionWeighted);
        assert!("l1".parse::<LossKind>().is_err());
        assert_eq!(LossKind::MotionWeighted.to_string(), "mw");
    }
}
