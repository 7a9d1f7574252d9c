//! Segmentation training losses with analytic gradients.
//!
//! Dice loss, pixel-wise binary cross entropy, binary focal classification
//! loss, and objectness BCE, combined by a weighted total. Losses take
//! probabilities (not logits); the log singularities are handled by
//! clamping to `[1e-7, 1 - 1e-7]`. Every loss returns its gradient with
//! respect to the predictions, checked against central finite differences
//! in the test suites.

use crate::error::{CmfError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;
pub const DICE_SMOOTHING: f64 = 1.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// A predicted mask: H x W probabilities in [0, 1].
#[derive(Clone, Debug)]
pub struct SoftMask {
    values: Tensor,
}

impl SoftMask {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(CmfError::shape(
                "soft mask",
                format!("expected HxW, got rank {}", values.rank()),
            ));
        }
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CmfError::invalid(
                "soft mask",
                format!("probabilities must lie in [0, 1], found {v}"),
            ));
        }
        Ok(SoftMask { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.values.dims()[0]
    }
}

/// Scalar loss plus its gradient with respect to the prediction entries.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Coefficients of the weighted total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 2.0,
            lambda_s: 3.0,
            lambda_d: 2.0,
            lambda_p: 5.0,
        }
    }
}

/// The four component values entering the total.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents {
    pub dice: f64,
    pub pixel_bce: f64,
    pub classification: f64,
    pub objectness: f64,
}

fn check_mask_dims(op: &'static str, pred: &SoftMask, gt: &BinaryMask) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(CmfError::shape(
            op,
            format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    Ok(())
}

/// Dice loss `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`, eps = 1.
pub fn dice_loss(pred: &SoftMask, gt: &BinaryMask) -> Result<LossValue> {
    check_mask_dims("dice_loss", pred, gt)?;
    let eps = DICE_SMOOTHING;
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut gsum = 0.0f64;
    for (&p, &g) in pred.values.data().iter().zip(gt.data()) {
        let p = p as f64;
        if g {
            inter += p;
            gsum += 1.0;
        }
        psum += p;
    }
    let num = 2.0 * inter + eps;
    let den = psum + gsum + eps;
    let value = 1.0 - num / den;
    let gradient = gt
        .data()
        .iter()
        .map(|&g| {
            let dnum = if g { 2.0 } else { 0.0 };
            -(dnum * den - num) / (den * den)
        })
        .collect();
    Ok(LossValue { value, gradient })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean pixel-wise binary cross entropy.
pub fn pixel_bce(pred: &SoftMask, gt: &BinaryMask) -> Result<LossValue> {
    check_mask_dims("pixel_bce", pred, gt)?;
    let n = pred.values.len() as f64;
    let mut value = 0.0f64;
    let mut gradient = Vec::with_capacity(pred.values.len());
    for (&p, &g) in pred.values.data().iter().zip(gt.data()) {
        let praw = p as f64;
        let pc = clamp_prob(praw);
        let gv = if g { 1.0 } else { 0.0 };
        value -= gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln();
        let clamped = praw < PROB_CLAMP || praw > 1.0 - PROB_CLAMP;
        gradient.push(if clamped {
            0.0
        } else {
            (pc - gv) / (pc * (1.0 - pc)) / n
        });
    }
    Ok(LossValue {
        value: value / n,
        gradient,
    })
}

/// Binary focal loss over per-class probabilities, averaged over classes.
pub fn focal_loss(scores: &[f64], gt_class: usize) -> Result<LossValue> {
    focal_loss_with(scores, gt_class, FOCAL_ALPHA, FOCAL_GAMMA)
}

pub fn focal_loss_with(
    scores: &[f64],
    gt_class: usize,
    alpha: f64,
    gamma: f64,
) -> Result<LossValue> {
    if scores.is_empty() {
        return Err(CmfError::invalid("focal_loss", "no class scores"));
    }
    if gt_class >= scores.len() {
        return Err(CmfError::invalid(
            "focal_loss",
            format!(
                "class index {gt_class} out of range for {} classes",
                scores.len()
            ),
        ));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(CmfError::invalid(
            "focal_loss",
            format!("scores must lie in [0, 1], found {s}"),
        ));
    }
    let n = scores.len() as f64;
    let mut value = 0.0f64;
    let mut gradient = Vec::with_capacity(scores.len());
    for (c, &raw) in scores.iter().enumerate() {
        let s = clamp_prob(raw);
        let positive = c == gt_class;
        let (v, dv) = if positive {
            let v = -alpha * (1.0 - s).powf(gamma) * s.ln();
            let dv = alpha * gamma * (1.0 - s).powf(gamma - 1.0) * s.ln()
                - alpha * (1.0 - s).powf(gamma) / s;
            (v, dv)
        } else {
            let v = -(1.0 - alpha) * s.powf(gamma) * (1.0 - s).ln();
            let dv = -(1.0 - alpha) * gamma * s.powf(gamma - 1.0) * (1.0 - s).ln()
                + (1.0 - alpha) * s.powf(gamma) / (1.0 - s);
            (v, dv)
        };
        value += v;
        let clamped = raw < PROB_CLAMP || raw > 1.0 - PROB_CLAMP;
        gradient.push(if clamped { 0.0 } else { dv / n });
    }
    Ok(LossValue {
        value: value / n,
        gradient,
    })
}

/// Binary cross entropy for a single objectness score. Returns the loss and
/// its derivative with respect to the prediction.
pub fn objectness_bce(pred_obj: f64, target: bool) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&pred_obj) {
        return Err(CmfError::invalid(
            "objectness_bce",
            format!("objectness must lie in [0, 1], got {pred_obj}"),
        ));
    }
    let p = clamp_prob(pred_obj);
    let t = if target { 1.0 } else { 0.0 };
    let value = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
    let clamped = pred_obj < PROB_CLAMP || pred_obj > 1.0 - PROB_CLAMP;
    let grad = if clamped {
        0.0
    } else {
        (p - t) / (p * (1.0 - p))
    };
    Ok((value, grad))
}

/// Weighted total: `lambda_D L_D + lambda_P L_P + lambda_C L_C + lambda_S L_S`.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> f64 {
    weights.lambda_d * components.dice
        + weights.lambda_p * components.pixel_bce
        + weights.lambda_c * components.classification
        + weights.lambda_s * components.objectness
}
