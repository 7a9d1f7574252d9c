//! Class-agnostic motion-segmentation metrics.
//!
//! Matching accepts a predicted instance as a true positive only when its
//! IoU with a ground-truth instance exceeds 0.5, which makes the matching
//! unique. SQ is the mean IoU over matched pairs, RQ is `TP / (TP + FN)`
//! (false positives deliberately do not enter this recognition quality),
//! and CAQ is their product. The conventional panoptic recognition quality
//! `TP / (TP + FP/2 + FN/2)` is reported alongside as a secondary column.
//! The pixel-level F-measure and the background IoU are computed on the
//! unions of all predicted and ground-truth moving-object pixels.

use crate::error::{CmfError, Result};
use crate::mask::BinaryMask;

/// A set of instance masks with objectness scores.
#[derive(Clone, Debug)]
pub struct InstanceSet {
    width: usize,
    height: usize,
    masks: Vec<BinaryMask>,
    scores: Vec<f64>,
}

impl InstanceSet {
    pub fn new(
        width: usize,
        height: usize,
        masks: Vec<BinaryMask>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if masks.len() != scores.len() {
            return Err(CmfError::invalid(
                "instance set",
                format!("{} masks but {} scores", masks.len(), scores.len()),
            ));
        }
        for (i, m) in masks.iter().enumerate() {
            if m.width() != width || m.height() != height {
                return Err(CmfError::shape(
                    "instance set",
                    format!(
                        "mask {i} is {}x{}, set is {width}x{height}",
                        m.width(),
                        m.height()
                    ),
                ));
            }
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(CmfError::invalid(
                "instance set",
                format!("scores must lie in [0, 1], found {s}"),
            ));
        }
        Ok(InstanceSet {
            width,
            height,
            masks,
            scores,
        })
    }

    /// Ground-truth style set: every score 1.
    pub fn from_masks(width: usize, height: usize, masks: Vec<BinaryMask>) -> Result<Self> {
        let scores = vec![1.0; masks.len()];
        InstanceSet::new(width, height, masks, scores)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Union of all instance pixels.
    pub fn union_mask(&self) -> BinaryMask {
        let mut u = BinaryMask::empty(self.width, self.height);
        for m in &self.masks {
            u = u.union(m).unwrap();
        }
        u
    }

    /// Resolve overlapping masks: a contested pixel goes to the instance
    /// with the higher score (earlier index on ties). Instances emptied by
    /// the resolution are kept as empty masks so indices stay aligned.
    pub fn resolve_overlaps(&self) -> InstanceSet {
        let mut order: Vec<usize> = (0..self.masks.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut claimed = vec![false; self.width * self.height];
        let mut resolved = vec![BinaryMask::empty(self.width, self.height); self.masks.len()];
        for &i in &order {
            let src = &self.masks[i];
            let dst = &mut resolved[i];
            for (j, &on) in src.data().iter().enumerate() {
                if on && !claimed[j] {
                    claimed[j] = true;
                    dst.set(j % self.width, j / self.width, true);
                }
            }
        }
        InstanceSet {
            width: self.width,
            height: self.height,
            masks: resolved,
            scores: self.scores.clone(),
        }
    }
}

/// Matched (pred, gt, IoU) pairs plus the leftovers on both sides.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Per-evaluation metric summary.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricReport {
    pub sq: f64,
    pub rq: f64,
    pub caq: f64,
    pub f_measure: f64,
    pub bg_iou: f64,
    /// Conventional panoptic recognition quality, for comparison only.
    pub rq_panoptic: f64,
    pub tp: usize,
    pub fn_count: usize,
    pub fp: usize,
}

/// Intersection over union; 0 when the union is empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.count() + b.count() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Greedy matching in descending IoU order among pairs with IoU > 0.5.
/// The 0.5 threshold makes the matching unique regardless of order.
pub fn match_instances(pred: &InstanceSet, gt: &InstanceSet) -> Result<MatchResult> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(CmfError::shape(
            "match_instances",
            format!(
                "{}x{} predictions vs {}x{} ground truth",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    let mut candidates = Vec::new();
    for (pi, pm) in pred.masks().iter().enumerate() {
        for (gi, gm) in gt.masks().iter().enumerate() {
            let iou = mask_iou(pm, gm)?;
            if iou > 0.5 {
                candidates.push((pi, gi, iou));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut used_pred = vec![false; pred.len()];
    let mut used_gt = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (pi, gi, iou) in candidates {
        if !used_pred[pi] && !used_gt[gi] {
            used_pred[pi] = true;
            used_gt[gi] = true;
            pairs.push((pi, gi, iou));
        }
    }
    Ok(MatchResult {
        pairs,
        unmatched_pred: (0..pred.len()).filter(|&i| !used_pred[i]).collect(),
        unmatched_gt: (0..gt.len()).filter(|&i| !used_gt[i]).collect(),
    })
}

/// `(SQ, RQ, CAQ)`: SQ is the mean matched IoU (0 with no matches), RQ is
/// `TP / (TP + FN)`, CAQ their product.
pub fn caq(matching: &MatchResult) -> (f64, f64, f64) {
    let tp = matching.pairs.len();
    let fn_count = matching.unmatched_gt.len();
    let sq = if tp == 0 {
        0.0
    } else {
        matching.pairs.iter().map(|&(_, _, iou)| iou).sum::<f64>() / tp as f64
    };
    let rq = if tp + fn_count == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_count) as f64
    };
    (sq, rq, sq * rq)
}

/// Pixel-level F-measure on the union masks: `2PR / (P + R)`, 0 when both
/// precision and recall are zero.
pub fn f_measure(pred_union: &BinaryMask, gt_union: &BinaryMask) -> Result<f64> {
    let inter = pred_union.intersection_count(gt_union)? as f64;
    let p = if pred_union.count() == 0 {
        0.0
    } else {
        inter / pred_union.count() as f64
    };
    let r = if gt_union.count() == 0 {
        0.0
    } else {
        inter / gt_union.count() as f64
    };
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r))
}

/// IoU of the non-moving background: the complements of the union masks.
pub fn bg_iou(pred_union: &BinaryMask, gt_union: &BinaryMask) -> Result<f64> {
    mask_iou(&pred_union.complement(), &gt_union.complement())
}

/// Full evaluation of one image pair: overlap resolution, matching, CAQ,
/// F-measure and background IoU.
pub fn evaluate(pred: &InstanceSet, gt: &InstanceSet) -> Result<MetricReport> {
    let pred = pred.resolve_overlaps();
    let matching = match_instances(&pred, gt)?;
    let (sq, rq, caq_v) = caq(&matching);
    let tp = matching.pairs.len();
    let fp = matching.unmatched_pred.len();
    let fn_count = matching.unmatched_gt.len();
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_count as f64;
    let rq_panoptic = if denom == 0.0 { 0.0 } else { tp as f64 / denom };
    let pu = pred.union_mask();
    let gu = gt.union_mask();
    Ok(MetricReport {
        sq,
        rq,
        caq: caq_v,
        f_measure: f_measure(&pu, &gu)?,
        bg_iou: bg_iou(&pu, &gu)?,
        rq_panoptic,
        tp,
        fn_count,
        fp,
    })
}

/// Fixed-order accumulation of per-image results into dataset totals.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    iou_sum: f64,
    tp: usize,
    fn_count: usize,
    fp: usize,
    inter_px: u64,
    pred_px: u64,
    gt_px: u64,
    bg_inter_px: u64,
    bg_union_px: u64,
    images: usize,
}

impl MetricAccumulator {
    pub fn add_image(&mut self, pred: &InstanceSet, gt: &InstanceSet) -> Result<MetricReport> {
        let report = evaluate(pred, gt)?;
        let resolved = pred.resolve_overlaps();
        let matching = match_instances(&resolved, gt)?;
        self.iou_sum += matching.pairs.iter().map(|&(_, _, i)| i).sum::<f64>();
        self.tp += report.tp;
        self.fn_count += report.fn_count;
        self.fp += report.fp;
        let pu = resolved.union_mask();
        let gu = gt.union_mask();
        self.inter_px += pu.intersection_count(&gu)? as u64;
        self.pred_px += pu.count() as u64;
        self.gt_px += gu.count() as u64;
        let pb = pu.complement();
        let gb = gu.complement();
        self.bg_inter_px += pb.intersection_count(&gb)? as u64;
        self.bg_union_px += (pb.count() + gb.count() - pb.intersection_count(&gb)?) as u64;
        self.images += 1;
        Ok(report)
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// Dataset-level report: instance counts pooled across images, pixel
    /// measures pooled across pixels.
    pub fn report(&self) -> MetricReport {
        let sq = if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        };
        let rq = if self.tp + self.fn_count == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_count) as f64
        };
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_count as f64;
        let rq_panoptic = if denom == 0.0 {
            0.0
        } else {
            self.tp as f64 / denom
        };
        let p = if self.pred_px == 0 {
            0.0
        } else {
            self.inter_px as f64 / self.pred_px as f64
        };
        let r = if self.gt_px == 0 {
            0.0
        } else {
            self.inter_px as f64 / self.gt_px as f64
        };
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        let bg = if self.bg_union_px == 0 {
            0.0
        } else {
            self.bg_inter_px as f64 / self.bg_union_px as f64
        };
        MetricReport {
            sq,
            rq,
            caq: sq * rq,
            f_measure: f,
            bg_iou: bg,
            rq_panoptic,
            tp: self.tp,
            fn_count: self.fn_count,
            fp: self.fp,
        }
    }
}
