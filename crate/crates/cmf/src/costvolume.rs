//! Plane-sweep cost volumes.
//!
//! The 4D volume stores the absolute feature difference
//! `|warped_source(d, c, x, y) - target(c, x, y)|` for every hypothesis
//! depth, preserving the channel axis. A channel-mean reduction to the
//! conventional `D x H x W` volume exists for comparison runs, and the
//! per-pixel argmin-depth map exposes the inconsistency that independently
//! moving objects leave in the volume.

use rayon::prelude::*;

use crate::depthrange::DepthRange;
use crate::error::{CmfError, Result};
use crate::geometry::{bilinear_sample, project_plane, Intrinsics, RigidPose};
use crate::tensor::Tensor;

/// The `D` linearly spaced hypothesis depths, `d_min` and `d_max` inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSamples {
    values: Vec<f64>,
}

impl DepthSamples {
    /// `bins` equally spaced values spanning the range, endpoints exact.
    pub fn linear(range: &DepthRange, bins: usize) -> Result<DepthSamples> {
        if bins < 2 {
            return Err(CmfError::invalid(
                "linear_depth_samples",
                format!("need at least 2 bins, got {bins}"),
            ));
        }
        let span = range.d_max - range.d_min;
        let step = span / (bins - 1) as f64;
        let mut values: Vec<f64> = (0..bins).map(|i| range.d_min + step * i as f64).collect();
        values[0] = range.d_min;
        values[bins - 1] = range.d_max;
        Ok(DepthSamples { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn d_min(&self) -> f64 {
        self.values[0]
    }

    pub fn d_max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Spacing between consecutive hypothesis planes.
    pub fn bin_width(&self) -> f64 {
        (self.d_max() - self.d_min()) / (self.values.len() - 1) as f64
    }
}

/// The `D x C x H x W` matching-cost volume plus the per-plane validity of
/// the warp that produced each slice.
#[derive(Clone, Debug)]
pub struct CostVolume4D {
    pub data: Tensor,
    pub samples: DepthSamples,
    /// `D x H x W` row-major; false where the reprojection left the source.
    pub valid: Vec<bool>,
}

impl CostVolume4D {
    pub fn depth_bins(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[3]
    }

    /// Validity as a CMFT-serializable 0.0/1.0 tensor.
    pub fn valid_tensor(&self) -> Tensor {
        let dims = vec![self.depth_bins(), self.height(), self.width()];
        let data = self
            .valid
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(dims, data).unwrap()
    }
}

/// Warp the source features over every hypothesis plane and take absolute
/// differences against the target features.
///
/// Invalid warped pixels do not keep their zero-filled sample; every channel
/// entry at an invalid pixel is overwritten with the maximum valid cost of
/// its depth slice so invalid regions never win the argmin.
pub fn build_cost_volume(
    source_features: &Tensor,
    target_features: &Tensor,
    samples: &DepthSamples,
    pose: &RigidPose,
    intrinsics: &Intrinsics,
) -> Result<CostVolume4D> {
    if source_features.dims() != target_features.dims() {
        return Err(CmfError::shape(
            "build_cost_volume",
            format!(
                "source {:?} vs target {:?}",
                source_features.dims(),
                target_features.dims()
            ),
        ));
    }
    if source_features.rank() != 3 {
        return Err(CmfError::shape(
            "build_cost_volume",
            format!(
                "features must be CxHxW, got rank {}",
                source_features.rank()
            ),
        ));
    }
    if samples.is_empty() {
        return Err(CmfError::invalid("build_cost_volume", "no depth samples"));
    }
    let (c, h, w) = (
        source_features.dims()[0],
        source_features.dims()[1],
        source_features.dims()[2],
    );
    if intrinsics.width != w || intrinsics.height != h {
        return Err(CmfError::shape(
            "build_cost_volume",
            format!(
                "intrinsics are {}x{} but features are {w}x{h} (supply feature-resolution intrinsics)",
                intrinsics.width, intrinsics.height
            ),
        ));
    }
    let bins = samples.len();
    let plane = h * w;
    let target = target_features.data();

    let mut data = vec![0.0f32; bins * c * plane];
    let mut valid = vec![false; bins * plane];
    data.par_chunks_mut(c * plane)
        .zip(valid.par_chunks_mut(plane))
        .enumerate()
        .try_for_each(|(di, (slab, vslab))| -> Result<()> {
            let depth = samples.values()[di];
            let grid = project_plane(depth, pose, intrinsics)?;
            let warped = bilinear_sample(source_features, &grid)?;
            let wdata = warped.data();
            let mut slice_max = 0.0f32;
            for ci in 0..c {
                for i in 0..plane {
                    let cost = (wdata[ci * plane + i] - target[ci * plane + i]).abs();
                    slab[ci * plane + i] = cost;
                    if grid.valid[i] && cost > slice_max {
                        slice_max = cost;
                    }
                }
            }
            for (i, &ok) in grid.valid.iter().enumerate() {
                vslab[i] = ok;
                if !ok {
                    for ci in 0..c {
                        slab[ci * plane + i] = slice_max;
                    }
                }
            }
            Ok(())
        })?;

    Ok(CostVolume4D {
        data: Tensor::new(vec![bins, c, h, w], data)?,
        samples: samples.clone(),
        valid,
    })
}

/// Mean over the channel axis: the conventional `D x H x W` volume used by
/// the comparison path.
pub fn channel_mean_volume(volume: &CostVolume4D) -> Tensor {
    let (d, c, h, w) = (
        volume.depth_bins(),
        volume.channels(),
        volume.height(),
        volume.width(),
    );
    let plane = h * w;
    let src = volume.data.data();
    let mut out = vec![0.0f32; d * plane];
    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(di, slab)| {
            let base = di * c * plane;
            for (i, o) in slab.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for ci in 0..c {
                    acc += src[base + ci * plane + i] as f64;
                }
                *o = (acc / c as f64) as f32;
            }
        });
    Tensor::new(vec![d, h, w], out).unwrap()
}

/// Pixels with enough local feature contrast to support matching: the mean
/// absolute central-difference gradient over channels is at least `floor`.
/// Matching-based depth checks are only meaningful on such pixels.
pub fn textured_mask(features: &Tensor, floor: f32) -> Vec<bool> {
    assert_eq!(features.rank(), 3, "features must be CxHxW");
    let (c, h, w) = (features.dims()[0], features.dims()[1], features.dims()[2]);
    let plane = h * w;
    let f = features.data();
    let mut out = vec![false; plane];
    for y in 0..h {
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let mut g = 0.0f32;
            for ci in 0..c {
                let base = ci * plane;
                g += (f[base + y * w + xp] - f[base + y * w + xm]).abs()
                    + (f[base + yp * w + x] - f[base + ym * w + x]).abs();
            }
            out[y * w + x] = g / c as f32 >= floor;
        }
    }
    out
}

/// Per-pixel hypothesis depth minimizing the 3D cost; ties break toward the
/// smaller depth index.
pub fn depth_argmin_map(volume3d: &Tensor, samples: &DepthSamples) -> Result<Tensor> {
    if volume3d.rank() != 3 {
        return Err(CmfError::shape(
            "depth_argmin_map",
            format!("volume must be DxHxW, got rank {}", volume3d.rank()),
        ));
    }
    let (d, h, w) = (volume3d.dims()[0], volume3d.dims()[1], volume3d.dims()[2]);
    if d != samples.len() {
        return Err(CmfError::shape(
            "depth_argmin_map",
            format!(
                "volume has {d} depth bins but {} samples given",
                samples.len()
            ),
        ));
    }
    let plane = h * w;
    let src = volume3d.data();
    let mut out = vec![0.0f32; plane];
    for (i, o) in out.iter_mut().enumerate() {
        let mut best = src[i];
        let mut best_d = 0usize;
        for di in 1..d {
            let v = src[di * plane + i];
            if v < best {
                best = v;
                best_d = di;
            }
        }
        *o = samples.values()[best_d] as f32;
    }
    Tensor::new(vec![h, w], out)
}
