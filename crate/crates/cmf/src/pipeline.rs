//! End-to-end orchestration: frames in, instance predictions out.
//!
//! The stages mirror the batch CLI: extract features from both frames,
//! scale the intrinsics to the feature grid, sweep the depth hypotheses
//! into a 4D cost volume, run the motion-feature network, decode instance
//! masks, and optionally score them against ground truth. Every stage
//! failure is wrapped with the stage name; every default is materialized
//! into a [`ResolvedConfig`] before the first stage runs.

use std::path::PathBuf;

use crate::costvolume::{self, CostVolume4D, DepthSamples};
use crate::decoder::{self, DecoderParams};
use crate::depthrange::{self, DepthRange};
use crate::error::{CmfError, Result};
use crate::features::extract_features;
use crate::geometry::{Intrinsics, RigidPose};
use crate::metrics::{self, InstanceSet, MetricReport};
use crate::motionnet::{self, MotionFeatures, MotionNetConfig, MotionNetParams};
use crate::tensor::Tensor;

/// How the depth range is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum RangeChoice {
    Preset(String),
    Explicit(DepthRange),
}

impl Default for RangeChoice {
    fn default() -> Self {
        RangeChoice::Preset("vcas-320x960".to_string())
    }
}

/// User-facing pipeline configuration; unset fields take defaults.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub range: RangeChoice,
    pub bins: usize,
    pub feature_channels: usize,
    pub f2_channels: usize,
    pub f3_channels: usize,
    pub net_widths: MotionNetWidths,
    pub n_maps: usize,
    pub threshold: f64,
    pub score_floor: f64,
    pub seed: u64,
    /// Directories of pre-trained weights; seeded initialization otherwise.
    pub motion_weights: Option<PathBuf>,
    pub decoder_weights: Option<PathBuf>,
    /// Keep the (large) cost volume in the output.
    pub keep_volume: bool,
    pub keep_features: bool,
    /// Emit `stage=... key=value` lines on standard error.
    pub log: bool,
}

/// Channel widths of the motion network blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionNetWidths {
    pub down1: usize,
    pub down2: usize,
    pub up1: usize,
    pub up2: usize,
    pub out: usize,
}

impl Default for MotionNetWidths {
    fn default() -> Self {
        MotionNetWidths {
            down1: 64,
            down2: 96,
            up1: 64,
            up2: 64,
            out: 64,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            range: RangeChoice::default(),
            bins: 64,
            feature_channels: 64,
            f2_channels: 64,
            f3_channels: 64,
            net_widths: MotionNetWidths::default(),
            n_maps: 32,
            threshold: 0.45,
            score_floor: 0.3,
            seed: 0,
            motion_weights: None,
            decoder_weights: None,
            keep_volume: false,
            keep_features: false,
            log: false,
        }
    }
}

/// Fully explicit configuration: every default materialized, the depth
/// range resolved to numbers.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub range: DepthRange,
    pub bins: usize,
    pub feature_channels: usize,
    pub f2_channels: usize,
    pub f3_channels: usize,
    pub net_widths: MotionNetWidths,
    pub n_maps: usize,
    pub threshold: f64,
    pub score_floor: f64,
    pub seed: u64,
    pub motion_weights: Option<PathBuf>,
    pub decoder_weights: Option<PathBuf>,
    pub keep_volume: bool,
    pub keep_features: bool,
    pub log: bool,
}

impl PipelineConfig {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let range = match &self.range {
            RangeChoice::Explicit(r) => *r,
            RangeChoice::Preset(name) => depthrange::preset(name).ok_or_else(|| {
                CmfError::invalid(
                    "config",
                    format!(
                        "unknown preset {name:?}; available: {}",
                        depthrange::preset_names().join(", ")
                    ),
                )
            })?,
        };
        if self.bins < 2 {
            return Err(CmfError::invalid("config", "need at least 2 depth bins"));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(CmfError::invalid(
                "config",
                format!("threshold must lie in (0, 1), got {}", self.threshold),
            ));
        }
        Ok(ResolvedConfig {
            range,
            bins: self.bins,
            feature_channels: self.feature_channels,
            f2_channels: self.f2_channels,
            f3_channels: self.f3_channels,
            net_widths: self.net_widths,
            n_maps: self.n_maps,
            threshold: self.threshold,
            score_floor: self.score_floor,
            seed: self.seed,
            motion_weights: self.motion_weights.clone(),
            decoder_weights: self.decoder_weights.clone(),
            keep_volume: self.keep_volume,
            keep_features: self.keep_features,
            log: self.log,
        })
    }
}

impl ResolvedConfig {
    pub fn motion_config(&self) -> MotionNetConfig {
        MotionNetConfig {
            volume_channels: self.feature_channels,
            down1_channels: self.net_widths.down1,
            down2_channels: self.net_widths.down2,
            up1_channels: self.net_widths.up1,
            up2_channels: self.net_widths.up2,
            out_channels: self.net_widths.out,
            f2_channels: self.f2_channels,
            f3_channels: self.f3_channels,
            depth_bins: self.bins,
            negative_slope: 0.01,
        }
    }
}

/// Everything the pipeline produced, untouched by serialization.
#[derive(Debug)]
pub struct PipelineOutput {
    pub config: ResolvedConfig,
    pub prediction: InstanceSet,
    pub motion_features: MotionFeatures,
    pub samples: DepthSamples,
    pub feature_intrinsics: Intrinsics,
    /// Argmin depth of the channel-mean volume (always computed; cheap).
    pub argmin_map: Tensor,
    pub volume: Option<CostVolume4D>,
    pub features_prev: Option<Tensor>,
    pub features_next: Option<Tensor>,
    pub report: Option<MetricReport>,
}

fn log_stage(enabled: bool, stage: &str, detail: &str) {
    if enabled {
        eprintln!("stage={stage} {detail}");
    }
}

/// Run the whole pipeline on a frame pair.
///
/// `intrinsics` are at image resolution; the pipeline scales them by the
/// actual feature-grid ratio (1/4). The pose maps points of `frame_next`
/// into `frame_prev` coordinates.
pub fn run_pipeline(
    frame_prev: &Tensor,
    frame_next: &Tensor,
    pose: &RigidPose,
    intrinsics: &Intrinsics,
    config: &PipelineConfig,
    gt: Option<&InstanceSet>,
) -> Result<PipelineOutput> {
    let cfg = config.resolve()?;
    log_stage(
        cfg.log,
        "config",
        &format!(
            "d_min={} d_max={} bins={} channels={} seed={}",
            cfg.range.d_min, cfg.range.d_max, cfg.bins, cfg.feature_channels, cfg.seed
        ),
    );
    if frame_prev.dims() != frame_next.dims() {
        return Err(CmfError::shape(
            "features",
            format!(
                "frames disagree: {:?} vs {:?}",
                frame_prev.dims(),
                frame_next.dims()
            ),
        ));
    }

    // feature extraction at 1/4, guides at 1/8 and 1/16
    let fseed = cfg.seed;
    let f_prev = extract_features(frame_prev, cfg.feature_channels, 4, fseed)
        .map_err(|e| e.in_stage("features"))?;
    let f_next = extract_features(frame_next, cfg.feature_channels, 4, fseed)
        .map_err(|e| e.in_stage("features"))?;
    let f2 = extract_features(frame_next, cfg.f2_channels, 8, fseed.wrapping_add(8))
        .map_err(|e| e.in_stage("features"))?;
    let f3 = extract_features(frame_next, cfg.f3_channels, 16, fseed.wrapping_add(16))
        .map_err(|e| e.in_stage("features"))?;
    log_stage(
        cfg.log,
        "features",
        &format!(
            "dims={}x{}x{} stride=4",
            f_next.dims()[0],
            f_next.dims()[1],
            f_next.dims()[2]
        ),
    );

    let ratio = f_next.dims()[2] as f64 / intrinsics.width as f64;
    let k_feat = intrinsics
        .scaled(ratio)
        .map_err(|e| e.in_stage("features"))?;

    let samples =
        DepthSamples::linear(&cfg.range, cfg.bins).map_err(|e| e.in_stage("costvolume"))?;
    let volume = costvolume::build_cost_volume(&f_prev, &f_next, &samples, pose, &k_feat)
        .map_err(|e| e.in_stage("costvolume"))?;
    log_stage(
        cfg.log,
        "costvolume",
        &format!(
            "dims={:?} valid={}",
            volume.data.dims(),
            volume.valid.iter().filter(|&&b| b).count()
        ),
    );
    let argmin_map =
        costvolume::depth_argmin_map(&costvolume::channel_mean_volume(&volume), &samples)
            .map_err(|e| e.in_stage("costvolume"))?;

    let params = match &cfg.motion_weights {
        Some(dir) => MotionNetParams::load(dir).map_err(|e| e.in_stage("motionnet"))?,
        None => MotionNetParams::init(&cfg.motion_config(), cfg.seed)
            .map_err(|e| e.in_stage("motionnet"))?,
    };
    let motion_features =
        motionnet::forward(&volume, &f2, &f3, &params).map_err(|e| e.in_stage("motionnet"))?;
    log_stage(
        cfg.log,
        "motionnet",
        &format!("dims={:?}", motion_features.data.dims()),
    );

    let mut dec = match &cfg.decoder_weights {
        Some(dir) => DecoderParams::load(dir).map_err(|e| e.in_stage("decoder"))?,
        None => DecoderParams::init(motion_features.data.dims()[0], cfg.n_maps, cfg.seed)
            .map_err(|e| e.in_stage("decoder"))?,
    };
    dec.score_floor = cfg.score_floor;
    let prediction = decoder::decode(&motion_features, &dec, cfg.threshold)
        .map_err(|e| e.in_stage("decoder"))?;
    log_stage(
        cfg.log,
        "decoder",
        &format!("instances={}", prediction.len()),
    );

    let report = match gt {
        Some(gt_set) => {
            let r = metrics::evaluate(&prediction, gt_set).map_err(|e| e.in_stage("metrics"))?;
            log_stage(
                cfg.log,
                "metrics",
                &format!(
                    "sq={:.4} rq={:.4} caq={:.4} f={:.4} bg_iou={:.4}",
                    r.sq, r.rq, r.caq, r.f_measure, r.bg_iou
                ),
            );
            Some(r)
        }
        None => None,
    };

    Ok(PipelineOutput {
        prediction,
        motion_features,
        samples,
        feature_intrinsics: k_feat,
        argmin_map,
        volume: if cfg.keep_volume { Some(volume) } else { None },
        features_prev: if cfg.keep_features {
            Some(f_prev)
        } else {
            None
        },
        features_next: if cfg.keep_features {
            Some(f_next)
        } else {
            None
        },
        report,
        config: cfg,
    })
}
