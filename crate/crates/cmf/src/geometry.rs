//! Pinhole camera model, rigid transforms, and plane-sweep warping.
//!
//! The projection direction follows the warping convention of the rest of
//! the crate: the pose maps target-frame points into the source frame, so
//! `project_plane` answers "where in the source image does each target
//! pixel land, assuming it sits on the fronto-parallel plane at depth d".
//!
//! Conventions: pixel `(u, v)` samples at continuous coordinate `(u, v)`
//! (pixel centers on the integer grid), bilinear interpolation clamps its
//! corner lookups at the border, and out-of-frustum reprojections are
//! marked invalid and sample as zero.

use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

/// Pinhole intrinsics at the resolution of the map being warped.
///
/// When features live at 1/4 of the image resolution, scale `fx, fy, cx,
/// cy` (and the dims) by 1/4 before use; see [`Intrinsics::scaled`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CmfError::invalid(
                "intrinsics",
                format!(
                    "focal lengths must be positive, got fx={} fy={}",
                    self.fx, self.fy
                ),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CmfError::invalid(
                "intrinsics",
                "image dims must be positive",
            ));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(CmfError::invalid(
                "intrinsics",
                format!(
                    "principal point ({}, {}) outside {}x{} image",
                    self.cx, self.cy, self.width, self.height
                ),
            ));
        }
        Ok(())
    }

    /// Intrinsics rescaled by `ratio` (e.g. 0.25 for quarter-resolution
    /// feature maps). All of fx, fy, cx, cy and the pixel dims scale.
    pub fn scaled(&self, ratio: f64) -> Result<Intrinsics> {
        Intrinsics::new(
            self.fx * ratio,
            self.fy * ratio,
            self.cx * ratio,
            self.cy * ratio,
            ((self.width as f64) * ratio).round() as usize,
            ((self.height as f64) * ratio).round() as usize,
        )
    }
}

/// SE(3) transform: `x' = rotation * x + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = RigidPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Checks orthonormality (R^T R = I within 1e-6) and det(R) = 1.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for row in r {
                    dot += row[i] * row[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(CmfError::invalid(
                        "pose",
                        format!("rotation is not orthonormal (RtR[{i}][{j}] = {dot})"),
                    ));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(CmfError::invalid(
                "pose",
                format!("det(R) = {det}, expected 1"),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self == &RigidPose::identity()
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> RigidPose {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let ti = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        RigidPose {
            rotation: rt,
            translation: ti,
        }
    }

    /// Rotation about the z (optical) axis by `angle` radians, plus translation.
    pub fn rot_z(angle: f64, translation: [f64; 3]) -> RigidPose {
        let (s, c) = angle.sin_cos();
        RigidPose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    /// Rotation about the y axis (pan), plus translation.
    pub fn rot_y(angle: f64, translation: [f64; 3]) -> RigidPose {
        let (s, c) = angle.sin_cos();
        RigidPose {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation,
        }
    }
}

/// Continuous source-frame sample coordinates for every target pixel, plus
/// a per-pixel validity flag (inside the source bounds, positive depth).
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub width: usize,
    pub height: usize,
    /// `(x, y)` per pixel, row-major.
    pub coords: Vec<(f64, f64)>,
    pub valid: Vec<bool>,
}

impl SampleGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Back-project every target pixel to the plane at `depth`, transform by
/// `pose`, and reproject. Pixels whose transformed depth is non-positive or
/// whose reprojection leaves `[0, W-1] x [0, H-1]` are invalid.
pub fn project_plane(depth: f64, pose: &RigidPose, intrinsics: &Intrinsics) -> Result<SampleGrid> {
    if !(depth > 0.0) {
        return Err(CmfError::invalid(
            "project_plane",
            format!("depth must be positive, got {depth}"),
        ));
    }
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut coords = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);

    if pose.is_identity() {
        // the identity grid, exactly
        for v in 0..h {
            for u in 0..w {
                coords.push((u as f64, v as f64));
                valid.push(true);
            }
        }
        return Ok(SampleGrid {
            width: w,
            height: h,
            coords,
            valid,
        });
    }

    let r = &pose.rotation;
    let t = &pose.translation;
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    for v in 0..h {
        let ry = (v as f64 - intrinsics.cy) / intrinsics.fy;
        for u in 0..w {
            let rx = (u as f64 - intrinsics.cx) / intrinsics.fx;
            // X = depth * (rx, ry, 1); X' = R X + t
            let px = depth * (r[0][0] * rx + r[0][1] * ry + r[0][2]) + t[0];
            let py = depth * (r[1][0] * rx + r[1][1] * ry + r[1][2]) + t[1];
            let pz = depth * (r[2][0] * rx + r[2][1] * ry + r[2][2]) + t[2];
            if pz <= 0.0 {
                coords.push((-1.0, -1.0));
                valid.push(false);
                continue;
            }
            let x = intrinsics.fx * (px / pz) + intrinsics.cx;
            let y = intrinsics.fy * (py / pz) + intrinsics.cy;
            let ok = x >= 0.0 && x <= xmax && y >= 0.0 && y <= ymax;
            coords.push((x, y));
            valid.push(ok);
        }
    }
    Ok(SampleGrid {
        width: w,
        height: h,
        coords,
        valid,
    })
}

/// Bilinear interpolation of `source` (`C x H x W`) at the grid coordinates.
/// Invalid grid entries produce 0.0 in every channel; interpolation corners
/// clamp at the image border.
pub fn bilinear_sample(source: &Tensor, grid: &SampleGrid) -> Result<Tensor> {
    if source.rank() != 3 {
        return Err(CmfError::shape(
            "bilinear_sample",
            format!("source must be CxHxW, got rank {}", source.rank()),
        ));
    }
    let (c, h, w) = (source.dims()[0], source.dims()[1], source.dims()[2]);
    if grid.width != w || grid.height != h {
        return Err(CmfError::shape(
            "bilinear_sample",
            format!(
                "grid is {}x{} but source is {}x{}",
                grid.width, grid.height, w, h
            ),
        ));
    }
    let src = source.data();
    let plane = h * w;
    let mut out = vec![0.0f32; c * plane];
    for (i, (&(x, y), &ok)) in grid.coords.iter().zip(&grid.valid).enumerate() {
        if !ok {
            continue;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let dx = x - x0;
        let dy = y - y0;
        let ix0 = (x0 as isize).clamp(0, w as isize - 1) as usize;
        let iy0 = (y0 as isize).clamp(0, h as isize - 1) as usize;
        let ix1 = (ix0 + 1).min(w - 1);
        let iy1 = (iy0 + 1).min(h - 1);
        let w00 = (1.0 - dx) * (1.0 - dy);
        let w01 = dx * (1.0 - dy);
        let w10 = (1.0 - dx) * dy;
        let w11 = dx * dy;
        for ch in 0..c {
            let base = ch * plane;
            let v = w00 * src[base + iy0 * w + ix0] as f64
                + w01 * src[base + iy0 * w + ix1] as f64
                + w10 * src[base + iy1 * w + ix0] as f64
                + w11 * src[base + iy1 * w + ix1] as f64;
            out[base + i] = v as f32;
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// One plane of the warped volume: sample `source` where the target pixels
/// land under `pose` at the hypothesis `depth`.
pub fn warp_feature_plane(
    source: &Tensor,
    depth: f64,
    pose: &RigidPose,
    intrinsics: &Intrinsics,
) -> Result<Tensor> {
    let grid = project_plane(depth, pose, intrinsics)?;
    bilinear_sample(source, &grid)
}
