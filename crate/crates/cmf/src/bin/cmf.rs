//! Batch command-line front end.
//!
//! One subcommand per pipeline stage plus `pipeline run` wiring them all
//! together. Structured progress goes to standard error as
//! `stage=<name> key=value` lines; results go to standard output or files.
//! Exit code 0 means every stage succeeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmf::costvolume::{self, DepthSamples};
use cmf::decoder::DecoderParams;
use cmf::depthrange::{self, DepthRange};
use cmf::geometry::{warp_feature_plane, Intrinsics, RigidPose};
use cmf::imgio;
use cmf::kvfile::{self, KvFile};
use cmf::losses::{self, LossComponents, LossWeights, SoftMask};
use cmf::mask::BinaryMask;
use cmf::metrics::{InstanceSet, MetricAccumulator, MetricReport};
use cmf::motionnet::{self, MotionFeatures, MotionNetParams};
use cmf::pipeline::{self, MotionNetWidths, PipelineConfig, RangeChoice};
use cmf::scene::SceneSpec;
use cmf::tensor::{read_cmft, write_cmft, Tensor};
use cmf::{CmfError, Result};

#[derive(Parser)]
#[command(
    name = "cmf",
    about = "Plane-sweep motion features: cost volumes, motion segmentation, evaluation",
    version,
    max_term_width = 100
)]
struct Cli {
    /// Worker threads (default: all cores; CMF_THREADS overridable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenes with exact ground truth.
    Scene {
        #[command(subcommand)]
        command: SceneCmd,
    },
    /// Warp a feature map to the target viewpoint at one hypothesis depth.
    Warp(WarpArgs),
    /// Plane-sweep cost volumes.
    Costvol {
        #[command(subcommand)]
        command: CostvolCmd,
    },
    /// Motion features from a cost volume.
    Features {
        #[command(subcommand)]
        command: FeaturesCmd,
    },
    /// Decode instance masks from motion features.
    Segment(SegmentArgs),
    /// Depth-range policies.
    Range {
        #[command(subcommand)]
        command: RangeCmd,
    },
    /// Loss evaluation on prediction/ground-truth pairs.
    Loss {
        #[command(subcommand)]
        command: LossCmd,
    },
    /// Class-agnostic segmentation metrics over directories.
    Eval(EvalArgs),
    /// Initialize network weights deterministically.
    Net {
        #[command(subcommand)]
        command: NetCmd,
    },
    /// The full pipeline: frames in, instance masks out.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCmd,
    },
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Render a two-frame scene from a key=value spec file.
    Gen(SceneGenArgs),
}

#[derive(Args)]
struct SceneGenArgs {
    /// Scene spec (key=value; see `scene.cfg` docs in the README).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory: frames, depth, camera file, motion masks.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WarpArgs {
    /// Source feature map (CMFT, CxHxW).
    #[arg(long)]
    source: PathBuf,
    /// Camera file with intrinsics at feature resolution and the
    /// target-to-source pose (12 floats).
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    depth: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CostvolCmd {
    /// Warp-and-difference over linearly spaced hypothesis depths.
    Build(CostvolBuildArgs),
}

#[derive(Args)]
struct CostvolBuildArgs {
    /// Source-frame features (CMFT), warped toward the target.
    #[arg(long)]
    source: PathBuf,
    /// Target-frame features (CMFT).
    #[arg(long)]
    target: PathBuf,
    /// Camera file (feature-resolution intrinsics + pose).
    #[arg(long)]
    camera: PathBuf,
    /// Named depth-range preset.
    #[arg(long, conflicts_with = "range")]
    preset: Option<String>,
    /// Explicit depth range "d_min,d_max".
    #[arg(long)]
    range: Option<String>,
    /// Number of hypothesis depths.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// "4d" keeps the channel axis; "channel-mean" averages it away.
    #[arg(long, default_value = "4d")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    /// Write the DxHxW validity mask (0/1 CMFT).
    #[arg(long)]
    valid_out: Option<PathBuf>,
    /// Write the argmin depth map as an 8-bit PGM normalized over the range.
    #[arg(long)]
    argmin_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Run the 3D extraction network forward.
    Extract(FeaturesExtractArgs),
}

#[derive(Args)]
struct FeaturesExtractArgs {
    /// 4D cost volume (CMFT, DxCxHxW).
    #[arg(long)]
    volume: PathBuf,
    /// Half-resolution guide features (CMFT).
    #[arg(long)]
    f2: PathBuf,
    /// Quarter-resolution guide features (CMFT).
    #[arg(long)]
    f3: PathBuf,
    /// Weight directory (manifest.txt plus CMFT tensors).
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-channel heatmap PGMs.
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Motion features (CMFT, CxHxW).
    #[arg(long)]
    features: PathBuf,
    /// Decoder weight directory.
    #[arg(long)]
    weights: PathBuf,
    /// Mask binarization threshold (strictly greater).
    #[arg(long, default_value_t = 0.45)]
    threshold: f64,
    /// Instances with objectness below this are dropped.
    #[arg(long, default_value_t = 0.3)]
    score_floor: f64,
    /// Indexed instance map (PGM, pixel value = id, 0 = background).
    #[arg(long)]
    out: PathBuf,
    /// Optional colored PPM of the same map.
    #[arg(long)]
    color_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RangeCmd {
    /// Percentile rule over per-object mean depths.
    Fit(RangeFitArgs),
    /// Replay a batch-extrema log through the EMA update.
    Ema(RangeEmaArgs),
}

#[derive(Args)]
struct RangeFitArgs {
    /// Glob of depth maps (CMFT, HxW).
    #[arg(long)]
    depths: String,
    /// Glob of instance masks (indexed PGM), paired by sort order.
    #[arg(long)]
    masks: String,
    #[arg(long, default_value_t = 1.0)]
    p_lo: f64,
    #[arg(long, default_value_t = 99.0)]
    p_hi: f64,
    /// Write "d_min=... d_max=..." to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the sample depths as a one-column CSV histogram export.
    #[arg(long)]
    hist: Option<PathBuf>,
}

#[derive(Args)]
struct RangeEmaArgs {
    /// Initial range "d_min,d_max".
    #[arg(long)]
    init: String,
    /// Log file: one "batch_min batch_max" pair per line.
    #[arg(long)]
    stream: PathBuf,
}

#[derive(Subcommand)]
enum LossCmd {
    /// Evaluate the loss stack on one prediction.
    Eval(LossEvalArgs),
}

#[derive(Args)]
struct LossEvalArgs {
    /// Predicted soft mask (CMFT, HxW, probabilities).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask (PGM; nonzero = foreground).
    #[arg(long)]
    gt: PathBuf,
    /// Loss weights "lambda_C,lambda_S,lambda_D,lambda_P".
    #[arg(long, default_value = "2,3,2,5")]
    weights: String,
    /// Optional class scores (CMFT, rank 1) for the focal term.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Ground-truth class index for the focal term.
    #[arg(long, default_value_t = 0)]
    gt_class: usize,
    /// Optional objectness prediction in [0,1].
    #[arg(long)]
    objectness: Option<f64>,
    /// Objectness target (0 or 1).
    #[arg(long, default_value_t = 1)]
    obj_target: u8,
    /// Also write the components as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted indexed instance maps (PGM).
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth indexed instance maps (PGM).
    #[arg(long)]
    gt: PathBuf,
    /// "caq" reports SQ/RQ/CAQ; "kitti" reports Obj F and Bg IoU.
    #[arg(long, default_value = "caq")]
    mode: String,
    /// Per-image CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NetCmd {
    /// Write seeded initial weights to a directory.
    Init(NetInitArgs),
}

#[derive(Args)]
struct NetInitArgs {
    /// "motion" (3D extraction network) or "decoder".
    #[arg(long, default_value = "motion")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Cost-volume / feature channels.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Depth bins the network is built for (multiple of 4).
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 64)]
    down1: usize,
    #[arg(long, default_value_t = 96)]
    down2: usize,
    #[arg(long, default_value_t = 64)]
    up1: usize,
    #[arg(long, default_value_t = 64)]
    up2: usize,
    #[arg(long, default_value_t = 64)]
    out_channels: usize,
    #[arg(long, default_value_t = 64)]
    f2_channels: usize,
    #[arg(long, default_value_t = 64)]
    f3_channels: usize,
    /// Activation-map count (decoder only).
    #[arg(long, default_value_t = 32)]
    maps: usize,
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run every stage on a frame pair.
    Run(PipelineRunArgs),
}

#[derive(Args)]
struct PipelineRunArgs {
    /// Previous frame (PPM/PGM).
    #[arg(long)]
    prev: PathBuf,
    /// Current frame (PPM/PGM).
    #[arg(long)]
    next: PathBuf,
    /// Camera file: image-resolution intrinsics plus the pose mapping
    /// current-frame points into the previous frame.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, conflicts_with = "range")]
    preset: Option<String>,
    /// Explicit depth range "d_min,d_max".
    #[arg(long)]
    range: Option<String>,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 64)]
    feature_channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pre-initialized weights (otherwise seeded on the fly).
    #[arg(long)]
    motion_weights: Option<PathBuf>,
    #[arg(long)]
    decoder_weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.45)]
    threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    score_floor: f64,
    /// Key=value config file; command-line flags win on conflicts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth indexed instance map at feature resolution; enables
    /// metric evaluation.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dump the 4D cost volume (CMFT) and its validity mask.
    #[arg(long)]
    dump_volume: bool,
    /// Dump the argmin depth map (CMFT + normalized PGM).
    #[arg(long)]
    dump_argmin: bool,
    /// Dump the 1/4-resolution feature maps of both frames.
    #[arg(long)]
    dump_features: bool,
    /// Dump the motion features (CMFT).
    #[arg(long)]
    dump_cmf: bool,
}

fn parse_range(s: &str) -> Result<DepthRange> {
    let vals = kvfile::parse_floats("range", s)?;
    if vals.len() != 2 {
        return Err(CmfError::Format(format!(
            "range needs two values, got {s:?}"
        )));
    }
    DepthRange::new(vals[0], vals[1])
}

fn range_choice(preset: &Option<String>, range: &Option<String>) -> Result<RangeChoice> {
    match (preset, range) {
        (Some(p), _) => Ok(RangeChoice::Preset(p.clone())),
        (None, Some(r)) => Ok(RangeChoice::Explicit(parse_range(r)?)),
        (None, None) => Ok(RangeChoice::default()),
    }
}

fn load_camera(path: &Path) -> Result<(Intrinsics, RigidPose)> {
    let (k, pose) = kvfile::read_camera_file(path)?;
    Ok((k, pose.unwrap_or_else(RigidPose::identity)))
}

fn write_range_file(path: &Path, r: &DepthRange) -> Result<()> {
    std::fs::write(path, format!("d_min={}\nd_max={}\n", r.d_min, r.d_max))
        .map_err(|e| CmfError::io(path, e))
}

fn log(stage: &str, detail: &str) {
    eprintln!("stage={stage} {detail}");
}

fn cmd_scene_gen(args: SceneGenArgs) -> Result<()> {
    let kv = KvFile::load(&args.spec)?;
    let spec = SceneSpec::from_kv(&kv)?;
    let bundle = cmf::scene::generate(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CmfError::io(&args.out, e))?;
    let frame = |t: &Tensor, name: &str| -> Result<()> {
        let path = args.out.join(name);
        if spec.channels == 1 {
            let dims = t.dims().to_vec();
            let gray = Tensor::new(vec![dims[1], dims[2]], t.data().to_vec())?;
            imgio::write_pgm(&path, &gray)
        } else {
            imgio::write_ppm(&path, t)
        }
    };
    let ext = if spec.channels == 1 { "pgm" } else { "ppm" };
    frame(&bundle.frame_prev, &format!("frame_prev.{ext}"))?;
    frame(&bundle.frame_next, &format!("frame_next.{ext}"))?;
    write_cmft(args.out.join("depth_next.cmft"), &bundle.depth_next)?;
    kvfile::write_camera_file(
        args.out.join("camera.txt"),
        &bundle.intrinsics,
        Some(&bundle.pose),
    )?;
    for (i, mask) in bundle.motion_masks.iter().enumerate() {
        let ids: Vec<u8> = mask.data().iter().map(|&b| if b { 1 } else { 0 }).collect();
        imgio::write_index_map(
            args.out.join(format!("motion_mask_{i:02}.pgm")),
            mask.width(),
            mask.height(),
            &ids,
        )?;
    }
    // combined indexed ground truth for `eval`
    let set = InstanceSet::from_masks(
        bundle.intrinsics.width,
        bundle.intrinsics.height,
        bundle.motion_masks.clone(),
    )?;
    let ids = imgio::instances_to_index_map(&set)?;
    imgio::write_index_map(
        args.out.join("motion_instances.pgm"),
        set.width(),
        set.height(),
        &ids,
    )?;
    log(
        "scene",
        &format!(
            "out={} objects={} movers={} seed={}",
            args.out.display(),
            spec.objects.len(),
            bundle.motion_masks.len(),
            args.seed
        ),
    );
    Ok(())
}

fn cmd_warp(args: WarpArgs) -> Result<()> {
    let source = read_cmft(&args.source)?;
    let (k, pose) = load_camera(&args.camera)?;
    let warped = warp_feature_plane(&source, args.depth, &pose, &k)?;
    write_cmft(&args.out, &warped)?;
    log(
        "warp",
        &format!("depth={} out={}", args.depth, args.out.display()),
    );
    Ok(())
}

fn cmd_costvol_build(args: CostvolBuildArgs) -> Result<()> {
    let source = read_cmft(&args.source)?;
    let target = read_cmft(&args.target)?;
    let (k, pose) = load_camera(&args.camera)?;
    let range = match (&args.preset, &args.range) {
        (Some(p), _) => depthrange::preset(p).ok_or_else(|| {
            CmfError::invalid(
                "costvol",
                format!(
                    "unknown preset {p:?}; available: {}",
                    depthrange::preset_names().join(", ")
                ),
            )
        })?,
        (None, Some(r)) => parse_range(r)?,
        (None, None) => return Err(CmfError::invalid("costvol", "supply --preset or --range")),
    };
    let samples = DepthSamples::linear(&range, args.bins)?;
    let volume = costvolume::build_cost_volume(&source, &target, &samples, &pose, &k)?;
    log(
        "costvolume",
        &format!(
            "dims={:?} d_min={} d_max={} bins={}",
            volume.data.dims(),
            range.d_min,
            range.d_max,
            args.bins
        ),
    );
    match args.mode.as_str() {
        "4d" => write_cmft(&args.out, &volume.data)?,
        "channel-mean" => write_cmft(&args.out, &costvolume::channel_mean_volume(&volume))?,
        other => {
            return Err(CmfError::invalid(
                "costvol",
                format!("mode must be 4d or channel-mean, got {other:?}"),
            ))
        }
    }
    if let Some(path) = &args.valid_out {
        write_cmft(path, &volume.valid_tensor())?;
    }
    if let Some(path) = &args.argmin_out {
        let mean = costvolume::channel_mean_volume(&volume);
        let argmin = costvolume::depth_argmin_map(&mean, &samples)?;
        imgio::depth_to_pgm(path, &argmin, range.d_min, range.d_max)?;
    }
    Ok(())
}

fn cmd_features_extract(args: FeaturesExtractArgs) -> Result<()> {
    let data = read_cmft(&args.volume)?;
    if data.rank() != 4 {
        return Err(CmfError::shape(
            "features extract",
            format!("volume must be DxCxHxW, got rank {}", data.rank()),
        ));
    }
    let dims = data.dims().to_vec();
    let samples = DepthSamples::linear(&DepthRange::new(1.0, 2.0)?, dims[0].max(2))?;
    let volume = costvolume::CostVolume4D {
        valid: vec![true; dims[0] * dims[2] * dims[3]],
        data,
        samples,
    };
    let f2 = read_cmft(&args.f2)?;
    let f3 = read_cmft(&args.f3)?;
    let params = MotionNetParams::load(&args.weights)?;
    let features = motionnet::forward(&volume, &f2, &f3, &params)?;
    write_cmft(&args.out, &features.data)?;
    log(
        "motionnet",
        &format!("dims={:?} out={}", features.data.dims(), args.out.display()),
    );
    if let Some(dir) = &args.viz {
        let n = imgio::write_channel_heatmaps(dir, &features.data)?;
        log("viz", &format!("channels={n} dir={}", dir.display()));
    }
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let data = read_cmft(&args.features)?;
    let features = MotionFeatures { data, stride: 4 };
    let mut params = DecoderParams::load(&args.weights)?;
    params.score_floor = args.score_floor;
    let set = cmf::decoder::decode(&features, &params, args.threshold)?;
    let ids = imgio::instances_to_index_map(&set)?;
    imgio::write_index_map(&args.out, set.width(), set.height(), &ids)?;
    if let Some(path) = &args.color_out {
        imgio::write_color_index_map(path, set.width(), set.height(), &ids)?;
    }
    log(
        "decoder",
        &format!("instances={} out={}", set.len(), args.out.display()),
    );
    Ok(())
}

fn glob_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| CmfError::Format(format!("bad glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CmfError::Format(format!("glob {pattern:?}: {e}")))?;
    paths.sort();
    if paths.is_empty() {
        return Err(CmfError::Format(format!(
            "glob {pattern:?} matched nothing"
        )));
    }
    Ok(paths)
}

fn cmd_range_fit(args: RangeFitArgs) -> Result<()> {
    let depth_paths = glob_paths(&args.depths)?;
    let mask_paths = glob_paths(&args.masks)?;
    if depth_paths.len() != mask_paths.len() {
        return Err(CmfError::Format(format!(
            "{} depth maps but {} mask files",
            depth_paths.len(),
            mask_paths.len()
        )));
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (dp, mp) in depth_paths.iter().zip(&mask_paths) {
        let depth = read_cmft(dp)?;
        let (w, h, ids) = imgio::read_index_map(mp)?;
        let set = imgio::instances_from_index_map(w, h, &ids)?;
        let (s, sk) = depthrange::object_mean_depths(&depth, set.masks())?;
        samples.extend(s);
        skipped += sk;
    }
    let range = depthrange::percentile_range(&samples, args.p_lo, args.p_hi)?;
    log(
        "range",
        &format!(
            "samples={} skipped_empty={skipped} p_lo={} p_hi={}",
            samples.len(),
            args.p_lo,
            args.p_hi
        ),
    );
    println!("d_min={} d_max={}", range.d_min, range.d_max);
    if let Some(path) = &args.out {
        write_range_file(path, &range)?;
    }
    if let Some(path) = &args.hist {
        let mut csv = String::from("mean_depth\n");
        for s in &samples {
            csv.push_str(&format!("{}\n", s.mean_depth));
        }
        std::fs::write(path, csv).map_err(|e| CmfError::io(path, e))?;
    }
    Ok(())
}

fn cmd_range_ema(args: RangeEmaArgs) -> Result<()> {
    let init = parse_range(&args.init)?;
    let text = std::fs::read_to_string(&args.stream).map_err(|e| CmfError::io(&args.stream, e))?;
    let mut batches = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = kvfile::parse_floats("stream", line)?;
        if vals.len() != 2 {
            return Err(CmfError::parse(
                &args.stream,
                format!("line {}: need two values", lineno + 1),
            ));
        }
        batches.push((vals[0], vals[1]));
    }
    let range = depthrange::replay_ema(init, &batches)?;
    log("range", &format!("steps={}", batches.len()));
    println!("d_min={} d_max={}", range.d_min, range.d_max);
    Ok(())
}

fn cmd_loss_eval(args: LossEvalArgs) -> Result<()> {
    let pred = SoftMask::new(read_cmft(&args.pred)?)?;
    let gt_img = imgio::read_pgm(&args.gt)?;
    let (h, w) = (gt_img.dims()[0], gt_img.dims()[1]);
    let gt = BinaryMask::new(w, h, gt_img.data().iter().map(|&v| v > 0.0).collect())?;
    let wv = kvfile::parse_floats("weights", &args.weights)?;
    if wv.len() != 4 {
        return Err(CmfError::Format(
            "weights must be lambda_C,lambda_S,lambda_D,lambda_P".to_string(),
        ));
    }
    let weights = LossWeights {
        lambda_c: wv[0],
        lambda_s: wv[1],
        lambda_d: wv[2],
        lambda_p: wv[3],
    };
    let dice = losses::dice_loss(&pred, &gt)?;
    let bce = losses::pixel_bce(&pred, &gt)?;
    let classification = match &args.scores {
        Some(path) => {
            let t = read_cmft(path)?;
            let scores: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
            losses::focal_loss(&scores, args.gt_class)?.value
        }
        None => 0.0,
    };
    let objectness = match args.objectness {
        Some(p) => losses::objectness_bce(p, args.obj_target != 0)?.0,
        None => 0.0,
    };
    let components = LossComponents {
        dice: dice.value,
        pixel_bce: bce.value,
        classification,
        objectness,
    };
    let total = losses::total_loss(&components, &weights);
    println!("dice        {:>12.6}", components.dice);
    println!("pixel_bce   {:>12.6}", components.pixel_bce);
    println!("focal       {:>12.6}", components.classification);
    println!("objectness  {:>12.6}", components.objectness);
    println!("total       {:>12.6}", total);
    if let Some(path) = &args.csv {
        let csv = format!(
            "dice,pixel_bce,focal,objectness,total\n{},{},{},{},{}\n",
            components.dice,
            components.pixel_bce,
            components.classification,
            components.objectness,
            total
        );
        std::fs::write(path, csv).map_err(|e| CmfError::io(path, e))?;
    }
    Ok(())
}

fn list_pgms(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CmfError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CmfError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CmfError::Format(format!(
            "no .pgm files under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn load_instances(path: &Path) -> Result<InstanceSet> {
    let (w, h, ids) = imgio::read_index_map(path)?;
    imgio::instances_from_index_map(w, h, &ids)
}

fn report_line(mode: &str, name: &str, r: &MetricReport) -> String {
    match mode {
        "kitti" => format!(
            "{name} obj_f={:.4} bg_iou={:.4} tp={} fn={} fp={}",
            r.f_measure, r.bg_iou, r.tp, r.fn_count, r.fp
        ),
        _ => format!(
            "{name} sq={:.4} rq={:.4} caq={:.4} rq_panoptic={:.4} tp={} fn={} fp={}",
            r.sq, r.rq, r.caq, r.rq_panoptic, r.tp, r.fn_count, r.fp
        ),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.mode != "caq" && args.mode != "kitti" {
        return Err(CmfError::invalid(
            "eval",
            format!("mode must be caq or kitti, got {:?}", args.mode),
        ));
    }
    let preds = list_pgms(&args.pred)?;
    let gts = list_pgms(&args.gt)?;
    if preds.len() != gts.len() {
        return Err(CmfError::Format(format!(
            "{} predictions but {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    // pixel-level F over unions; see the metrics module docs
    let mut acc = MetricAccumulator::default();
    let mut csv = String::from("image,sq,rq,caq,rq_panoptic,obj_f_pixel_union,bg_iou,tp,fn,fp\n");
    for (pp, gp) in preds.iter().zip(&gts) {
        let pred = load_instances(pp)?;
        let gt = load_instances(gp)?;
        let r = acc.add_image(&pred, &gt)?;
        let name = pp.file_name().unwrap().to_string_lossy().to_string();
        println!("{}", report_line(&args.mode, &name, &r));
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{}\n",
            r.sq, r.rq, r.caq, r.rq_panoptic, r.f_measure, r.bg_iou, r.tp, r.fn_count, r.fp
        ));
    }
    let total = acc.report();
    println!("{}", report_line(&args.mode, "aggregate", &total));
    csv.push_str(&format!(
        "aggregate,{},{},{},{},{},{},{},{},{}\n",
        total.sq,
        total.rq,
        total.caq,
        total.rq_panoptic,
        total.f_measure,
        total.bg_iou,
        total.tp,
        total.fn_count,
        total.fp
    ));
    if let Some(path) = &args.csv {
        std::fs::write(path, csv).map_err(|e| CmfError::io(path, e))?;
    }
    log(
        "eval",
        &format!("images={} mode={}", preds.len(), args.mode),
    );
    Ok(())
}

fn cmd_net_init(args: NetInitArgs) -> Result<()> {
    match args.kind.as_str() {
        "motion" => {
            let config = motionnet::MotionNetConfig {
                volume_channels: args.channels,
                down1_channels: args.down1,
                down2_channels: args.down2,
                up1_channels: args.up1,
                up2_channels: args.up2,
                out_channels: args.out_channels,
                f2_channels: args.f2_channels,
                f3_channels: args.f3_channels,
                depth_bins: args.bins,
                negative_slope: 0.01,
            };
            let params = MotionNetParams::init(&config, args.seed)?;
            params.save(&args.out)?;
        }
        "decoder" => {
            let params = DecoderParams::init(args.channels, args.maps, args.seed)?;
            params.save(&args.out)?;
        }
        other => {
            return Err(CmfError::invalid(
                "net init",
                format!("kind must be motion or decoder, got {other:?}"),
            ))
        }
    }
    log(
        "net",
        &format!(
            "kind={} seed={} out={}",
            args.kind,
            args.seed,
            args.out.display()
        ),
    );
    Ok(())
}

fn apply_config_file(config: &mut PipelineConfig, path: &Path) -> Result<()> {
    let kv = KvFile::load(path)?;
    if let Some(p) = kv.get("preset") {
        config.range = RangeChoice::Preset(p.to_string());
    }
    if let Some(r) = kv.get("range") {
        config.range = RangeChoice::Explicit(parse_range(r)?);
    }
    if let Some(v) = kv.get_usize("bins")? {
        config.bins = v;
    }
    if let Some(v) = kv.get_usize("feature_channels")? {
        config.feature_channels = v;
        config.f2_channels = v;
        config.f3_channels = v;
    }
    if let Some(v) = kv.get_usize("f2_channels")? {
        config.f2_channels = v;
    }
    if let Some(v) = kv.get_usize("f3_channels")? {
        config.f3_channels = v;
    }
    if let Some(v) = kv.get_usize("n_maps")? {
        config.n_maps = v;
    }
    if let Some(v) = kv.get_f64("threshold")? {
        config.threshold = v;
    }
    if let Some(v) = kv.get_f64("score_floor")? {
        config.score_floor = v;
    }
    if let Some(v) = kv.get_usize("seed")? {
        config.seed = v as u64;
    }
    let mut widths = config.net_widths;
    if let Some(v) = kv.get_usize("down1")? {
        widths.down1 = v;
    }
    if let Some(v) = kv.get_usize("down2")? {
        widths.down2 = v;
    }
    if let Some(v) = kv.get_usize("up1")? {
        widths.up1 = v;
    }
    if let Some(v) = kv.get_usize("up2")? {
        widths.up2 = v;
    }
    if let Some(v) = kv.get_usize("out_channels")? {
        widths.out = v;
    }
    config.net_widths = widths;
    Ok(())
}

fn cmd_pipeline_run(args: PipelineRunArgs) -> Result<()> {
    let frame_prev = imgio::read_image(&args.prev)?;
    let frame_next = imgio::read_image(&args.next)?;
    let (k, pose) = load_camera(&args.camera)?;

    let mut config = PipelineConfig {
        bins: args.bins,
        feature_channels: args.feature_channels,
        f2_channels: args.feature_channels,
        f3_channels: args.feature_channels,
        seed: args.seed,
        threshold: args.threshold,
        score_floor: args.score_floor,
        motion_weights: args.motion_weights.clone(),
        decoder_weights: args.decoder_weights.clone(),
        keep_volume: args.dump_volume,
        keep_features: args.dump_features,
        log: true,
        ..PipelineConfig::default()
    };
    // default widths follow the feature width for small runs
    if args.feature_channels != 64 {
        let c = args.feature_channels;
        config.net_widths = MotionNetWidths {
            down1: c,
            down2: c + c / 2,
            up1: c,
            up2: c,
            out: c,
        };
        config.n_maps = (c * 2).min(32);
    }
    if let Some(path) = &args.config {
        apply_config_file(&mut config, path)?;
    }
    config.range = range_choice(&args.preset, &args.range)?;

    let gt = match &args.gt {
        Some(path) => Some(load_instances(path)?),
        None => None,
    };

    let out = pipeline::run_pipeline(&frame_prev, &frame_next, &pose, &k, &config, gt.as_ref())?;

    std::fs::create_dir_all(&args.out).map_err(|e| CmfError::io(&args.out, e))?;
    let ids = imgio::instances_to_index_map(&out.prediction)?;
    imgio::write_index_map(
        args.out.join("instances.pgm"),
        out.prediction.width(),
        out.prediction.height(),
        &ids,
    )?;
    imgio::write_color_index_map(
        args.out.join("instances.ppm"),
        out.prediction.width(),
        out.prediction.height(),
        &ids,
    )?;
    let mut scores = String::from("instance,objectness\n");
    for (i, s) in out.prediction.scores().iter().enumerate() {
        scores.push_str(&format!("{},{}\n", i + 1, s));
    }
    let scores_path = args.out.join("scores.csv");
    std::fs::write(&scores_path, scores).map_err(|e| CmfError::io(&scores_path, e))?;

    if args.dump_cmf {
        write_cmft(args.out.join("cmf.cmft"), &out.motion_features.data)?;
    }
    if args.dump_argmin {
        write_cmft(args.out.join("argmin.cmft"), &out.argmin_map)?;
        imgio::depth_to_pgm(
            args.out.join("argmin.pgm"),
            &out.argmin_map,
            out.config.range.d_min,
            out.config.range.d_max,
        )?;
    }
    if let Some(volume) = &out.volume {
        write_cmft(args.out.join("volume.cmft"), &volume.data)?;
        write_cmft(args.out.join("volume_valid.cmft"), &volume.valid_tensor())?;
    }
    if let (Some(fp), Some(fnx)) = (&out.features_prev, &out.features_next) {
        write_cmft(args.out.join("features_prev.cmft"), fp)?;
        write_cmft(args.out.join("features_next.cmft"), fnx)?;
    }
    if let Some(r) = &out.report {
        println!("{}", report_line("caq", "metrics", r));
        let csv = format!(
            "sq,rq,caq,rq_panoptic,obj_f_pixel_union,bg_iou,tp,fn,fp\n{},{},{},{},{},{},{},{},{}\n",
            r.sq, r.rq, r.caq, r.rq_panoptic, r.f_measure, r.bg_iou, r.tp, r.fn_count, r.fp
        );
        let path = args.out.join("metrics.csv");
        std::fs::write(&path, csv).map_err(|e| CmfError::io(&path, e))?;
    }
    log("pipeline", &format!("out={}", args.out.display()));
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("CMF_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .filter(|&n| n > 0);
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmfError::Format(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Scene {
            command: SceneCmd::Gen(args),
        } => cmd_scene_gen(args),
        Command::Warp(args) => cmd_warp(args),
        Command::Costvol {
            command: CostvolCmd::Build(args),
        } => cmd_costvol_build(args),
        Command::Features {
            command: FeaturesCmd::Extract(args),
        } => cmd_features_extract(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Range { command } => match command {
            RangeCmd::Fit(args) => cmd_range_fit(args),
            RangeCmd::Ema(args) => cmd_range_ema(args),
        },
        Command::Loss {
            command: LossCmd::Eval(args),
        } => cmd_loss_eval(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Net {
            command: NetCmd::Init(args),
        } => cmd_net_init(args),
        Command::Pipeline {
            command: PipelineCmd::Run(args),
        } => cmd_pipeline_run(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
