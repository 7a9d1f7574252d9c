//! Instance-activation-map mask decoder (forward only).
//!
//! A pointwise convolution turns the motion features into N activation
//! maps, each normalized by a spatial softmax so it is a convex weighting
//! over pixels. Pooling the features under each map yields one instance
//! embedding, from which two linear heads produce a per-instance mask
//! kernel (dotted against the features and squashed to a soft mask) and an
//! objectness score. Instances below the score floor, or whose thresholded
//! mask is empty, are dropped.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CmfError, Result};
use crate::mask::BinaryMask;
use crate::metrics::InstanceSet;
use crate::motionnet::MotionFeatures;
use crate::tensor::{pointwise_conv2d, read_cmft, write_cmft, Tensor};

/// A dense linear map `out = weights * in + bias`.
#[derive(Clone, Debug)]
pub struct LinearHead {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    fn validate(&self, name: &str) -> Result<()> {
        if self.weights.rank() != 2 || self.bias.dims() != [self.weights.dims()[0]] {
            return Err(CmfError::shape(
                "decoder",
                format!(
                    "head {name}: weights {:?} and bias {:?} are inconsistent",
                    self.weights.dims(),
                    self.bias.dims()
                ),
            ));
        }
        Ok(())
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let (out, inn) = (self.weights.dims()[0], self.weights.dims()[1]);
        let w = self.weights.data();
        (0..out)
            .map(|o| {
                let mut acc = self.bias.data()[o] as f64;
                for (i, zv) in z.iter().enumerate().take(inn) {
                    acc += w[o * inn + i] as f64 * zv;
                }
                acc
            })
            .collect()
    }
}

/// Decoder weights: IAM convolution plus the two per-instance heads.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// `N x C` pointwise weights producing the activation maps.
    pub iam_conv: LinearHead,
    /// `C x C` map from pooled instance features to a mask kernel.
    pub mask_kernel_head: LinearHead,
    /// `1 x C` map from pooled instance features to objectness.
    pub objectness_head: LinearHead,
    /// Instances with objectness below this are dropped (default 0.3).
    pub score_floor: f64,
}

impl DecoderParams {
    /// Deterministic initialization for `channels`-wide features and
    /// `n_maps` activation maps.
    pub fn init(channels: usize, n_maps: usize, seed: u64) -> Result<DecoderParams> {
        if n_maps == 0 || channels == 0 {
            return Err(CmfError::invalid(
                "decoder init",
                "need at least one map and one channel",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (1.0 / channels as f32).sqrt();
        let params = DecoderParams {
            iam_conv: LinearHead {
                weights: Tensor::random_uniform(&[n_maps, channels], -s, s, &mut rng)?,
                bias: Tensor::zeros(&[n_maps])?,
            },
            mask_kernel_head: LinearHead {
                weights: Tensor::random_uniform(&[channels, channels], -s, s, &mut rng)?,
                bias: Tensor::zeros(&[channels])?,
            },
            objectness_head: LinearHead {
                weights: Tensor::random_uniform(&[1, channels], -s, s, &mut rng)?,
                bias: Tensor::zeros(&[1])?,
            },
            score_floor: 0.3,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.iam_conv.validate("iam_conv")?;
        self.mask_kernel_head.validate("mask_kernel_head")?;
        self.objectness_head.validate("objectness_head")?;
        let c = self.iam_conv.weights.dims()[1];
        if self.mask_kernel_head.weights.dims()[1] != c
            || self.objectness_head.weights.dims()[1] != c
        {
            return Err(CmfError::shape(
                "decoder",
                "heads disagree on the feature channel count".to_string(),
            ));
        }
        if self.objectness_head.weights.dims()[0] != 1 {
            return Err(CmfError::shape(
                "decoder",
                "objectness head must produce a single score".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.score_floor) {
            return Err(CmfError::invalid(
                "decoder",
                format!("score floor must lie in [0, 1), got {}", self.score_floor),
            ));
        }
        Ok(())
    }

    pub fn n_maps(&self) -> usize {
        self.iam_conv.weights.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.iam_conv.weights.dims()[1]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CmfError::io(dir, e))?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "score_floor={}", self.score_floor);
        for (name, head) in [
            ("iam_conv", &self.iam_conv),
            ("mask_kernel_head", &self.mask_kernel_head),
            ("objectness_head", &self.objectness_head),
        ] {
            let _ = writeln!(
                manifest,
                "layer={name} kind=linear in={} out={}",
                head.weights.dims()[1],
                head.weights.dims()[0]
            );
            write_cmft(dir.join(format!("{name}.weights.cmft")), &head.weights)?;
            write_cmft(dir.join(format!("{name}.bias.cmft")), &head.bias)?;
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| CmfError::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<DecoderParams> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| CmfError::io(&path, e))?;
        let mut score_floor = 0.3f64;
        let mut heads: Vec<(String, LinearHead)> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("score_floor=") {
                score_floor = v
                    .parse()
                    .map_err(|_| CmfError::parse(&path, format!("bad score floor {v:?}")))?;
                continue;
            }
            let fields: std::collections::HashMap<&str, &str> = line
                .split_whitespace()
                .filter_map(|tok| tok.split_once('='))
                .collect();
            let name = fields
                .get("layer")
                .ok_or_else(|| CmfError::parse(&path, format!("line without layer: {raw:?}")))?
                .to_string();
            let weights = read_cmft(dir.join(format!("{name}.weights.cmft")))?;
            let bias = read_cmft(dir.join(format!("{name}.bias.cmft")))?;
            heads.push((name, LinearHead { weights, bias }));
        }
        let mut take = |name: &str| -> Result<LinearHead> {
            let i = heads
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| CmfError::parse(&path, format!("manifest missing head {name}")))?;
            Ok(heads.remove(i).1)
        };
        let params = DecoderParams {
            iam_conv: take("iam_conv")?,
            mask_kernel_head: take("mask_kernel_head")?,
            objectness_head: take("objectness_head")?,
            score_floor,
        };
        params.validate()?;
        Ok(params)
    }
}

/// N activation maps: pointwise conv over the features, then a spatial
/// softmax per map so every map sums to one.
pub fn activation_maps(features: &MotionFeatures, params: &DecoderParams) -> Result<Tensor> {
    params.validate()?;
    let f = &features.data;
    if f.dims()[0] != params.channels() {
        return Err(CmfError::shape(
            "activation_maps",
            format!(
                "features have {} channels, decoder expects {}",
                f.dims()[0],
                params.channels()
            ),
        ));
    }
    let logits = pointwise_conv2d(f, &params.iam_conv.weights, &params.iam_conv.bias)?;
    let (n, h, w) = (logits.dims()[0], logits.dims()[1], logits.dims()[2]);
    let plane = h * w;
    let mut out = vec![0.0f32; n * plane];
    for m in 0..n {
        let src = &logits.data()[m * plane..][..plane];
        let max = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut exps = vec![0.0f64; plane];
        let mut sum = 0.0f64;
        for (e, &v) in exps.iter_mut().zip(src) {
            *e = ((v as f64) - max).exp();
            sum += *e;
        }
        for (o, e) in out[m * plane..][..plane].iter_mut().zip(&exps) {
            *o = (e / sum) as f32;
        }
    }
    Tensor::new(vec![n, h, w], out)
}

/// Pool the features under one activation map: `z = sum map(x,y) F(:,x,y)`.
fn pool_instance(features: &Tensor, map: &[f32]) -> Vec<f64> {
    let (c, plane) = (features.dims()[0], map.len());
    let f = features.data();
    (0..c)
        .map(|ci| {
            let mut acc = 0.0f64;
            for (i, &m) in map.iter().enumerate() {
                acc += m as f64 * f[ci * plane + i] as f64;
            }
            acc
        })
        .collect()
}

fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decode soft masks and objectness scores, binarize at `threshold`
/// (strictly greater), and keep instances above the score floor with a
/// non-empty mask.
pub fn decode(
    features: &MotionFeatures,
    params: &DecoderParams,
    threshold: f64,
) -> Result<InstanceSet> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(CmfError::invalid(
            "decode",
            format!("threshold must lie in (0, 1), got {threshold}"),
        ));
    }
    let maps = activation_maps(features, params)?;
    let f = &features.data;
    let (h, w) = (f.dims()[1], f.dims()[2]);
    let plane = h * w;
    let mut masks = Vec::new();
    let mut scores = Vec::new();
    for m in 0..params.n_maps() {
        let z = pool_instance(f, &maps.data()[m * plane..][..plane]);
        let objectness = sigmoid_scalar(params.objectness_head.apply(&z)[0]);
        if objectness < params.score_floor {
            continue;
        }
        let kernel = params.mask_kernel_head.apply(&z);
        let mut mask = BinaryMask::empty(w, h);
        let mut any = false;
        for i in 0..plane {
            let mut logit = 0.0f64;
            for (c, k) in kernel.iter().enumerate() {
                logit += k * f.data()[c * plane + i] as f64;
            }
            if sigmoid_scalar(logit) > threshold {
                mask.set(i % w, i / w, true);
                any = true;
            }
        }
        if any {
            masks.push(mask);
            scores.push(objectness);
        }
    }
    InstanceSet::new(w, h, masks, scores)
}
