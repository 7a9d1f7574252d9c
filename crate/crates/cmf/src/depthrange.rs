//! Depth-range policies for cost-volume construction.
//!
//! Two policies are provided: the exponential-moving-average update driven
//! by per-batch depth extrema (coefficients 0.99 / 0.01), and the
//! moving-object percentile rule, which takes the per-object mean depths
//! inside ground-truth masks and clips the range to their 1st and 99th
//! nearest-rank percentiles. Named presets carry the published ranges for
//! the supported datasets.

use crate::error::{CmfError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// The depth interval `[d_min, d_max]` swept by the cost volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthRange {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min > 0.0 && d_min < d_max) {
            return Err(CmfError::invalid(
                "depth range",
                format!("need 0 < d_min < d_max, got [{d_min}, {d_max}]"),
            ));
        }
        Ok(DepthRange { d_min, d_max })
    }

    /// Default starting range for EMA replay when nothing better is known.
    pub fn default_initial() -> Self {
        DepthRange {
            d_min: 0.1,
            d_max: 10.0,
        }
    }
}

/// The mean depth inside one ground-truth instance mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectDepthSample {
    pub mean_depth: f64,
}

/// One EMA step: `d <- 0.99 * d + 0.01 * batch extremum`, for both ends.
pub fn ema_update(range: &DepthRange, batch_min: f64, batch_max: f64) -> Result<DepthRange> {
    if !(batch_min > 0.0 && batch_max > 0.0) {
        return Err(CmfError::invalid(
            "ema_update",
            format!("batch extrema must be positive, got ({batch_min}, {batch_max})"),
        ));
    }
    DepthRange::new(
        0.99 * range.d_min + 0.01 * batch_min,
        0.99 * range.d_max + 0.01 * batch_max,
    )
}

/// Replay a log of (batch_min, batch_max) pairs from an initial range.
pub fn replay_ema(initial: DepthRange, batches: &[(f64, f64)]) -> Result<DepthRange> {
    let mut range = initial;
    for &(lo, hi) in batches {
        range = ema_update(&range, lo, hi)?;
    }
    Ok(range)
}

/// Mean depth inside each instance mask. Empty masks are skipped; the
/// second return value counts them so callers can report the omission.
pub fn object_mean_depths(
    depth_map: &Tensor,
    masks: &[BinaryMask],
) -> Result<(Vec<ObjectDepthSample>, usize)> {
    if depth_map.rank() != 2 {
        return Err(CmfError::shape(
            "object_mean_depths",
            format!("depth map must be HxW, got rank {}", depth_map.rank()),
        ));
    }
    let (h, w) = (depth_map.dims()[0], depth_map.dims()[1]);
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (i, mask) in masks.iter().enumerate() {
        if mask.width() != w || mask.height() != h {
            return Err(CmfError::shape(
                "object_mean_depths",
                format!(
                    "mask {i} is {}x{} but depth map is {w}x{h}",
                    mask.width(),
                    mask.height()
                ),
            ));
        }
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for (j, &inside) in mask.data().iter().enumerate() {
            if inside {
                sum += depth_map.data()[j] as f64;
                n += 1;
            }
        }
        if n == 0 {
            skipped += 1;
            continue;
        }
        let mean_depth = sum / n as f64;
        if !(mean_depth > 0.0) {
            return Err(CmfError::invalid(
                "object_mean_depths",
                format!("mask {i} has non-positive mean depth {mean_depth}"),
            ));
        }
        samples.push(ObjectDepthSample { mean_depth });
    }
    Ok((samples, skipped))
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th order statistic
/// (clamped to at least the first).
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Depth range spanned by the `p_lo`-th and `p_hi`-th percentiles of the
/// object mean depths; the cut itself is the outlier exclusion.
pub fn percentile_range(samples: &[ObjectDepthSample], p_lo: f64, p_hi: f64) -> Result<DepthRange> {
    if samples.len() < 2 {
        return Err(CmfError::invalid(
            "percentile_range",
            format!("need at least 2 samples, got {}", samples.len()),
        ));
    }
    if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
        return Err(CmfError::invalid(
            "percentile_range",
            format!("need 0 <= p_lo < p_hi <= 100, got ({p_lo}, {p_hi})"),
        ));
    }
    let mut depths: Vec<f64> = samples.iter().map(|s| s.mean_depth).collect();
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    DepthRange::new(nearest_rank(&depths, p_lo), nearest_rank(&depths, p_hi))
}

/// Published depth ranges selectable by name.
pub const PRESETS: &[(&str, DepthRange)] = &[
    (
        "kitti",
        DepthRange {
            d_min: 0.090,
            d_max: 2.465,
        },
    ),
    (
        "vcas-320x960",
        DepthRange {
            d_min: 0.091,
            d_max: 2.646,
        },
    ),
    (
        "vcas-kitti",
        DepthRange {
            d_min: 0.081,
            d_max: 2.424,
        },
    ),
    (
        "vcas-cityscapes",
        DepthRange {
            d_min: 0.101,
            d_max: 2.444,
        },
    ),
    (
        "manydepth-320x960",
        DepthRange {
            d_min: 0.114,
            d_max: 17.95,
        },
    ),
    (
        "manydepth-kitti",
        DepthRange {
            d_min: 0.105,
            d_max: 8.471,
        },
    ),
    (
        "manydepth-cityscapes",
        DepthRange {
            d_min: 0.105,
            d_max: 27.05,
        },
    ),
];

pub fn preset(name: &str) -> Option<DepthRange> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|&(_, r)| r)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_fixed_point() {
        let r = DepthRange::new(1.0, 10.0).unwrap();
        let u = ema_update(&r, 1.0, 10.0).unwrap();
        assert!((u.d_min - 1.0).abs() < 1e-12 && (u.d_max - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ema_single_step_arithmetic() {
        let r = DepthRange::new(1.0, 10.0).unwrap();
        let u = ema_update(&r, 2.0, 20.0).unwrap();
        assert!((u.d_min - 1.01).abs() < 1e-12);
        assert!((u.d_max - 10.10).abs() < 1e-12);
    }

    #[test]
    fn ema_converges_geometrically() {
        // d(k) = target + (d0 - target) * 0.99^k
        let mut r = DepthRange::new(1.0, 10.0).unwrap();
        for k in 1..=1000usize {
            r = ema_update(&r, 2.0, 20.0).unwrap();
            let f = 0.99f64.powi(k as i32);
            let want_min = 2.0 + (1.0 - 2.0) * f;
            let want_max = 20.0 + (10.0 - 20.0) * f;
            assert!((r.d_min - want_min).abs() < 1e-9, "k={k}");
            assert!((r.d_max - want_max).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn ema_rejects_non_positive() {
        let r = DepthRange::new(1.0, 2.0).unwrap();
        assert!(ema_update(&r, 0.0, 1.0).is_err());
        assert!(ema_update(&r, 1.0, -2.0).is_err());
        assert!(DepthRange::new(2.0, 1.0).is_err());
        assert!(DepthRange::new(0.0, 1.0).is_err());
    }

    #[test]
    fn mean_depths_basic_and_skip() {
        let depth = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 5.0]).unwrap();
        let top = BinaryMask::from_rect(2, 2, 0, 0, 2, 1);
        let empty = BinaryMask::empty(2, 2);
        let all = BinaryMask::from_rect(2, 2, 0, 0, 2, 2);
        let (samples, skipped) = object_mean_depths(&depth, &[top, empty, all]).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(samples[0].mean_depth, 2.0);
        assert_eq!(samples[1].mean_depth, 3.5);
    }

    #[test]
    fn mean_depths_match_loop_oracle() {
        let mut rng = crate::test_rng(31);
        let depth = Tensor::random_uniform(&[6, 7], 0.5, 4.0, &mut rng).unwrap();
        let mask = BinaryMask::from_rect(7, 6, 1, 2, 6, 5);
        let (samples, _) = object_mean_depths(&depth, &[mask.clone()]).unwrap();
        let mut sum = 0.0f64;
        let mut n = 0;
        for y in 0..6 {
            for x in 0..7 {
                if mask.get(x, y) {
                    sum += depth.at(&[y, x]) as f64;
                    n += 1;
                }
            }
        }
        assert!((samples[0].mean_depth - sum / n as f64).abs() < 1e-6);
    }

    #[test]
    fn percentiles_are_exact_order_statistics() {
        let samples: Vec<ObjectDepthSample> = (1..=100)
            .map(|i| ObjectDepthSample {
                mean_depth: i as f64,
            })
            .collect();
        let r = percentile_range(&samples, 1.0, 99.0).unwrap();
        assert_eq!(r.d_min, 1.0);
        assert_eq!(r.d_max, 99.0);
        let r = percentile_range(&samples, 0.0, 100.0).unwrap();
        assert_eq!(r.d_min, 1.0);
        assert_eq!(r.d_max, 100.0);
    }

    #[test]
    fn percentiles_of_a_pair_are_its_extremes() {
        let s = [
            ObjectDepthSample { mean_depth: 3.0 },
            ObjectDepthSample { mean_depth: 2.0 },
        ];
        let r = percentile_range(&s, 1.0, 99.0).unwrap();
        assert_eq!((r.d_min, r.d_max), (2.0, 3.0));
        assert!(percentile_range(&s[..1], 1.0, 99.0).is_err());
        assert!(percentile_range(&s, 50.0, 50.0).is_err());
    }

    #[test]
    fn percentile_properties() {
        let mut rng = crate::test_rng(77);
        use rand::seq::SliceRandom;
        use rand::Rng;
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let mut vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..30.0)).collect();
            let samples: Vec<_> = vals
                .iter()
                .map(|&v| ObjectDepthSample { mean_depth: v })
                .collect();
            let r = percentile_range(&samples, 1.0, 99.0).unwrap();
            // permutation invariance
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rng);
            let r2 = percentile_range(&shuffled, 1.0, 99.0).unwrap();
            assert_eq!(r, r2);
            // endpoints are members of the sample set
            assert!(vals.iter().any(|&v| v == r.d_min));
            assert!(vals.iter().any(|&v| v == r.d_max));
            // narrower percentiles nest inside (0, 100)
            let outer = percentile_range(&samples, 0.0, 100.0).unwrap();
            assert!(outer.d_min <= r.d_min && r.d_max <= outer.d_max);
            // shifting all samples shifts both endpoints exactly
            let delta = 0.625;
            for v in &mut vals {
                *v += delta;
            }
            let shifted: Vec<_> = vals
                .iter()
                .map(|&v| ObjectDepthSample { mean_depth: v })
                .collect();
            let r3 = percentile_range(&shifted, 1.0, 99.0).unwrap();
            assert_eq!(r3.d_min, r.d_min + delta);
            assert_eq!(r3.d_max, r.d_max + delta);
        }
    }

    #[test]
    fn presets_are_pinned() {
        let r = preset("vcas-320x960").unwrap();
        assert_eq!((r.d_min, r.d_max), (0.091, 2.646));
        let r = preset("kitti").unwrap();
        assert_eq!((r.d_min, r.d_max), (0.090, 2.465));
        let r = preset("manydepth-320x960").unwrap();
        assert_eq!((r.d_min, r.d_max), (0.114, 17.95));
        assert!(preset("nonsense").is_none());
        assert_eq!(preset_names().len(), 7);
    }

    #[test]
    fn moving_object_distribution_recovers_narrow_range() {
        // distribution shaped like a driving dataset: most mass close-in
        // with a handful of far outliers from depth estimation errors
        let mut rng = crate::test_rng(5);
        use rand::Rng;
        let mut samples = Vec::new();
        for _ in 0..500 {
            let base: f64 = rng.gen_range(0.0f64..1.0).powf(2.0);
            samples.push(ObjectDepthSample {
                mean_depth: 0.09 + 2.4 * base,
            });
        }
        for _ in 0..4 {
            samples.push(ObjectDepthSample {
                mean_depth: rng.gen_range(10.0..58.0),
            });
        }
        let r = percentile_range(&samples, 1.0, 99.0).unwrap();
        let manydepth = preset("manydepth-320x960").unwrap();
        assert!(r.d_max < 3.5, "outliers not excluded: {}", r.d_max);
        assert!((manydepth.d_max - r.d_max) / manydepth.d_max > 0.75);
        assert!(r.d_min < 0.3);
    }
}
