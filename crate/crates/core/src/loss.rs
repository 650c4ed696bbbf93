//! Segmentation and regression losses.
//!
//! All reductions accumulate in `f64` in index order, whatever the element
//! type, so results do not depend on how the caller batches work.

use serde::{Deserialize, Serialize};

use crate::nn::Real;
use crate::{Error, Result};

/// Per-class Tversky coefficients for (anterior, posterior, background).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TverskyParams {
    /// False-positive weights.
    pub alpha: [f64; 3],
    /// False-negative weights.
    pub beta: [f64; 3],
    pub class_weights: [f64; 3],
    pub epsilon: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self {
            alpha: [0.3, 0.3, 0.7],
            beta: [0.7, 0.7, 0.3],
            class_weights: [0.49, 0.49, 0.02],
            epsilon: 1e-6,
        }
    }
}

impl TverskyParams {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if (self.alpha[k] + self.beta[k] - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "alpha + beta must be 1 for class {k}"
                )));
            }
        }
        if (self.class_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("class weights must sum to 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn check_class_inputs<T: Real>(y: &[T], yhat: &[T]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::SizeMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    if let Some(i) = y.iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidArgument(format!(
            "label at {i} is not 0 or 1"
        )));
    }
    if let Some(i) = yhat
        .iter()
        .position(|&v| !(v >= T::zero() && v <= T::one()))
    {
        return Err(Error::InvalidArgument(format!(
            "probability at {i} outside [0, 1]"
        )));
    }
    Ok(())
}

/// (TP, FP, FN) soft counts.
fn soft_counts<T: Real>(y: &[T], yhat: &[T]) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&yi, &pi) in y.iter().zip(yhat) {
        let (yi, pi) = (yi.as_f64(), pi.as_f64());
        tp += yi * pi;
        fp += (1.0 - yi) * pi;
        fn_ += yi * (1.0 - pi);
    }
    (tp, fp, fn_)
}

/// Tversky loss of one class: `1 − (TP + ε) / (TP + α·FP + β·FN + ε)`.
pub fn tversky_class<T: Real>(
    y: &[T],
    yhat: &[T],
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<f64> {
    check_class_inputs(y, yhat)?;
    let (tp, fp, fn_) = soft_counts(y, yhat);
    let den = tp + alpha * fp + beta * fn_ + epsilon;
    if den == 0.0 {
        // only reachable with ε = 0 and an empty class predicted empty
        return Ok(0.0);
    }
    Ok(1.0 - (tp + epsilon) / den)
}

/// Loss value and its gradient with respect to `yhat`.
pub fn tversky_class_grad<T: Real>(
    y: &[T],
    yhat: &[T],
    alpha: f64,
    beta: f64,
    epsilon: f64,
) -> Result<(f64, Vec<T>)> {
    check_class_inputs(y, yhat)?;
    let (tp, fp, fn_) = soft_counts(y, yhat);
    let num = tp + epsilon;
    let den = tp + alpha * fp + beta * fn_ + epsilon;
    if den == 0.0 {
        return Ok((0.0, vec![T::zero(); y.len()]));
    }
    let inv2 = 1.0 / (den * den);
    let grad = y
        .iter()
        .map(|&yi| {
            let yi = yi.as_f64();
            let dnum = yi;
            let dden = yi + alpha * (1.0 - yi) - beta * yi;
            T::lit(-(dnum * den - num * dden) * inv2)
        })
        .collect();
    Ok((1.0 - num / den, grad))
}

fn split_classes<'a, T>(x: &'a [T], what: &str) -> Result<[&'a [T]; 3]> {
    if x.len() % 3 != 0 {
        return Err(Error::Shape(format!(
            "{what} length {} is not 3 channels",
            x.len()
        )));
    }
    let v = x.len() / 3;
    Ok([&x[..v], &x[v..2 * v], &x[2 * v..]])
}

/// Weighted sum of the three per-class Tversky losses. Inputs are
/// channel-major `3 × voxels` arrays.
pub fn multiclass_tversky<T: Real>(y: &[T], yhat: &[T], p: &TverskyParams) -> Result<f64> {
    Ok(per_class_tversky(y, yhat, p)?
        .iter()
        .zip(&p.class_weights)
        .map(|(l, w)| l * w)
        .sum())
}

/// The three unweighted per-class losses.
pub fn per_class_tversky<T: Real>(y: &[T], yhat: &[T], p: &TverskyParams) -> Result<[f64; 3]> {
    if y.len() != yhat.len() {
        return Err(Error::SizeMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    let ys = split_classes(y, "labels")?;
    let ps = split_classes(yhat, "probabilities")?;
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = tversky_class(ys[k], ps[k], p.alpha[k], p.beta[k], p.epsilon)?;
    }
    Ok(out)
}

pub fn multiclass_tversky_grad<T: Real>(
    y: &[T],
    yhat: &[T],
    p: &TverskyParams,
) -> Result<(f64, Vec<T>)> {
    if y.len() != yhat.len() {
        return Err(Error::SizeMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    let ys = split_classes(y, "labels")?;
    let ps = split_classes(yhat, "probabilities")?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for k in 0..3 {
        let (l, g) = tversky_class_grad(ys[k], ps[k], p.alpha[k], p.beta[k], p.epsilon)?;
        let w = p.class_weights[k];
        loss += w * l;
        let wt = T::lit(w);
        grad.extend(g.into_iter().map(|v| v * wt));
    }
    Ok((loss, grad))
}

fn check_same_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::SizeMismatch {
            expected: b.len(),
            found: a.len(),
        });
    }
    Ok(())
}

/// Mean squared error over all components.
pub fn mse_points<T: Real>(pred: &[T], gt: &[T]) -> Result<f64> {
    check_same_len(pred, gt)?;
    let s: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p.as_f64() - g.as_f64();
            d * d
        })
        .sum();
    Ok(s / pred.len() as f64)
}

/// Loss value and `2(pred − gt)/n`.
pub fn mse_points_grad<T: Real>(pred: &[T], gt: &[T]) -> Result<(f64, Vec<T>)> {
    let loss = mse_points(pred, gt)?;
    let k = 2.0 / pred.len() as f64;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| T::lit(k * (p.as_f64() - g.as_f64())))
        .collect();
    Ok((loss, grad))
}
