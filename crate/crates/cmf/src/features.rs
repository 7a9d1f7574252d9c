//! Built-in feature extractor.
//!
//! A stand-in for a learned backbone, good enough for matching-based work:
//! box-average the image down by `stride`, stack the result with its
//! horizontal and vertical gradients, and mix the stack through a fixed
//! seeded random channel projection. Two frames extracted with the same
//! seed share the projection, so their features are comparable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CmfError, Result};
use crate::tensor::{pointwise_conv2d, Tensor};

/// Extract `channels` feature channels at `1/stride` resolution.
pub fn extract_features(
    image: &Tensor,
    channels: usize,
    stride: usize,
    seed: u64,
) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(CmfError::shape(
            "extract_features",
            format!("image must be CxHxW, got rank {}", image.rank()),
        ));
    }
    if channels == 0 || stride == 0 {
        return Err(CmfError::invalid(
            "extract_features",
            "channels and stride must be positive",
        ));
    }
    let (c, h, w) = (image.dims()[0], image.dims()[1], image.dims()[2]);
    if h % stride != 0 || w % stride != 0 {
        return Err(CmfError::shape(
            "extract_features",
            format!("image {w}x{h} is not divisible by stride {stride}"),
        ));
    }
    let (hs, ws) = (h / stride, w / stride);

    // box average
    let mut small = Tensor::zeros(&[c, hs, ws])?;
    let norm = (stride * stride) as f64;
    for ci in 0..c {
        for y in 0..hs {
            for x in 0..ws {
                let mut acc = 0.0f64;
                for dy in 0..stride {
                    for dx in 0..stride {
                        acc += image.at(&[ci, y * stride + dy, x * stride + dx]) as f64;
                    }
                }
                let idx = (ci * hs + y) * ws + x;
                small.data_mut()[idx] = (acc / norm) as f32;
            }
        }
    }

    // central-difference gradients with clamped borders
    let mut stack = Tensor::zeros(&[3 * c, hs, ws])?;
    let plane = hs * ws;
    stack.data_mut()[..c * plane].copy_from_slice(small.data());
    for ci in 0..c {
        for y in 0..hs {
            for x in 0..ws {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(ws - 1);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(hs - 1);
                let dx = 0.5 * (small.at(&[ci, y, xp]) - small.at(&[ci, y, xm]));
                let dy = 0.5 * (small.at(&[ci, yp, x]) - small.at(&[ci, ym, x]));
                stack.data_mut()[((c + ci) * hs + y) * ws + x] = dx;
                stack.data_mut()[((2 * c + ci) * hs + y) * ws + x] = dy;
            }
        }
    }

    // fixed random projection shared by every frame with the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = 3 * c;
    let s = (3.0 / fan_in as f32).sqrt();
    let proj = Tensor::random_uniform(&[channels, fan_in], -s, s, &mut rng)?;
    let bias = Tensor::zeros(&[channels])?;
    pointwise_conv2d(&stack, &proj, &bias)
}
