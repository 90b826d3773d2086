#![allow(dead_code)]

use evseg::feature_stream::FeatureFrame;
use evseg::gating::EventInterval;
use evseg::tensor::{Parameterized, Tensor};
use rand::Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to rounding compare by absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn assert_close_all(what: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        assert!(e < tol, "{what}[{i}]: analytic {a:e} numeric {n:e} rel err {e:e}");
    }
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Central differences of `f` w.r.t. every entry of `t`.
pub fn numeric_tensor_grad(t: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..t.len())
        .map(|k| {
            let mut p = t.clone();
            central_diff(
                |x| {
                    p.as_mut_slice()[k] = x;
                    f(&p)
                },
                t.as_slice()[k],
            )
        })
        .collect()
}

/// Central differences of `f` w.r.t. every parameter scalar, one vector per
/// parameter in `params()` order.
pub fn numeric_param_grads<P: Parameterized + Clone>(p: &P, f: impl Fn(&P) -> f64) -> Vec<Vec<f64>> {
    let count = p.params().len();
    (0..count)
        .map(|pi| {
            let len = p.params()[pi].value.len();
            (0..len)
                .map(|k| {
                    let mut q = p.clone();
                    let x0 = q.params()[pi].value.as_slice()[k];
                    central_diff(
                        |x| {
                            q.params_mut()[pi].value.as_mut_slice()[k] = x;
                            f(&q)
                        },
                        x0,
                    )
                })
                .collect()
        })
        .collect()
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    Tensor::uniform(rows, cols, scale, rng)
}

/// Frames drawn uniformly from `[-scale, scale]`, already rounded to f32.
pub fn random_frames<R: Rng>(count: usize, grid_len: usize, m: usize, scale: f32, rng: &mut R) -> Vec<FeatureFrame> {
    (0..count)
        .map(|i| {
            let v = (0..grid_len * m).map(|_| rng.random_range(-scale..=scale)).collect();
            FeatureFrame::new(i as u64, grid_len, m, v).unwrap()
        })
        .collect()
}

pub fn frame_tensor(f: &FeatureFrame) -> Tensor {
    Tensor::from_vec(f.grid_len(), f.feature_dim(), f.to_f64())
}

pub fn weighted_sum(t: &Tensor, w: &Tensor) -> f64 {
    t.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

pub fn random_intervals<R: Rng>(rng: &mut R, max_count: usize, span: u64) -> Vec<EventInterval> {
    let count = rng.random_range(0..=max_count);
    (0..count)
        .map(|_| {
            let s = rng.random_range(0..span);
            let len = rng.random_range(0..8);
            EventInterval::new(s, (s + len).min(span - 1))
        })
        .collect()
}

pub fn overlap(a: &EventInterval, b: &EventInterval) -> u64 {
    (a.start..=a.end).filter(|t| (b.start..=b.end).contains(t)).count() as u64
}

/// Best (cardinality, total overlap) over every partial one-to-one matching.
pub fn brute_force(gt: &[EventInterval], det: &[EventInterval], min_overlap: u64) -> (usize, u64) {
    fn go(i: usize, used: &mut Vec<bool>, gt: &[EventInterval], det: &[EventInterval], k: u64) -> (usize, u64) {
        if i == gt.len() {
            return (0, 0);
        }
        let mut best = go(i + 1, used, gt, det, k);
        for j in 0..det.len() {
            let o = overlap(&gt[i], &det[j]);
            if used[j] || o < k {
                continue;
            }
            used[j] = true;
            let (c, s) = go(i + 1, used, gt, det, k);
            used[j] = false;
            best = best.max((c + 1, s + o));
        }
        best
    }
    go(0, &mut vec![false; det.len()], gt, det, min_overlap.max(1))
}

pub fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n, k - 1) {
        for c in 0..n {
            if !p.contains(&c) {
                let mut q = p.clone();
                q.push(c);
                out.push(q);
            }
        }
    }
    out
}

pub fn naive_smooth(e: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..e.len() {
        let mut sum = 0.0;
        let mut count = 0;
        let mut k = (t + 1).saturating_sub(n);
        while k <= t {
            sum += e[t] - e[k];
            count += 1;
            k += 1;
        }
        out.push(sum / count as f64);
    }
    out
}

/// Fill every interior run of negatives no longer than `phi` that sits
/// between two positives, then read off the maximal runs.
pub fn naive_extract(binary: &[bool], phi: u64) -> Vec<(u64, u64)> {
    let mut b = binary.to_vec();
    let positives: Vec<usize> = (0..b.len()).filter(|&t| binary[t]).collect();
    for w in positives.windows(2) {
        if (w[1] - w[0] - 1) as u64 <= phi {
            for x in &mut b[w[0]..w[1]] {
                *x = true;
            }
        }
    }
    let mut out = Vec::new();
    let mut t = 0;
    while t < b.len() {
        if b[t] {
            let s = t;
            while t + 1 < b.len() && b[t + 1] {
                t += 1;
            }
            out.push((s as u64, t as u64));
        }
        t += 1;
    }
    out
}

