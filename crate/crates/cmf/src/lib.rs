//! Plane-sweep motion features for class-agnostic motion segmentation.
//!
//! The crate builds 4D matching-cost volumes from consecutive frames under a
//! known relative camera pose, collapses them into per-channel motion
//! features with a small 3D convolutional network, decodes instance masks
//! from those features, and evaluates predictions with class-agnostic
//! quality metrics. A synthetic-scene generator provides exact ground truth
//! for all of it, and the `cmf` binary wires the pieces into a batch
//! pipeline.
//!
//! Start with the runnable examples (`cargo run --release --example
//! full_pipeline`) or the module docs:
//!
//! - [`tensor`]: dense f32 tensors, conv kernels, CMFT file format
//! - [`geometry`]: pinhole projection and plane-sweep warping
//! - [`costvolume`]: 4D cost volumes, channel-mean reduction, argmin depth
//! - [`motionnet`]: the 3D motion-feature extraction network
//! - [`depthrange`]: depth-range policies (EMA and percentile)
//! - [`losses`]: dice / BCE / focal / objectness losses with gradients
//! - [`metrics`]: SQ / RQ / CAQ, F-measure, background IoU
//! - [`decoder`]: instance-activation-map mask decoder
//! - [`scene`]: synthetic two-frame scenes with exact ground truth
//! - [`pipeline`]: end-to-end orchestration used by the CLI

pub mod costvolume;
pub mod decoder;
pub mod depthrange;
mod error;
pub mod features;
pub mod geometry;
pub mod imgio;
pub mod kvfile;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod motionnet;
pub mod pipeline;
pub mod scene;
pub mod tensor;

pub use error::{CmfError, Result};

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
