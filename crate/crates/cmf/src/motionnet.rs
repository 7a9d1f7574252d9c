//! The 3D motion-feature extraction network.
//!
//! The network turns a `D x C x H x W` cost volume into `C x H x W` motion
//! features. It is an hourglass over (D, H, W): two down-sampling blocks of
//! 3x3x3 convolutions (the second with a 1x1x1 depth-adjusting convolution),
//! a 4x4x4 transposed-convolution up-sampling block whose output is
//! concatenated with the first block's output, a second up-sampling block
//! with two more 3x3x3 convolutions, and a final transposed convolution with
//! kernel `(D, 1, 1)` and padding `(D-1, 0, 0)` that reads every depth plane
//! and collapses the depth axis to 1.
//!
//! Two guided excitation stages gate the volume with sigmoid weights derived
//! from scale-matched image feature maps: after the first block with the
//! half-resolution guide, after the second with the quarter-resolution one.
//!
//! Every convolution is followed by a leaky rectifier (slope 0.01) except
//! the final collapse, which stays linear.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costvolume::CostVolume4D;
use crate::error::{CmfError, Result};
use crate::tensor::{
    conv3d, hadamard, leaky_relu, pointwise_conv2d, read_cmft, sigmoid, transposed_conv3d,
    write_cmft, Conv3dSpec, Tensor,
};

/// Channel widths and input geometry for a fresh network.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionNetConfig {
    /// Channels of the cost volume (equals the feature channels).
    pub volume_channels: usize,
    pub down1_channels: usize,
    pub down2_channels: usize,
    pub up1_channels: usize,
    pub up2_channels: usize,
    pub out_channels: usize,
    /// Channels of the two guide feature maps.
    pub f2_channels: usize,
    pub f3_channels: usize,
    /// Depth bins the network is built for; D, H and W of the input volume
    /// must all be divisible by 4 so the skip concatenation lines up.
    pub depth_bins: usize,
    pub negative_slope: f32,
}

impl Default for MotionNetConfig {
    fn default() -> Self {
        MotionNetConfig {
            volume_channels: 64,
            down1_channels: 64,
            down2_channels: 96,
            up1_channels: 64,
            up2_channels: 64,
            out_channels: 64,
            f2_channels: 64,
            f3_channels: 64,
            depth_bins: 64,
            negative_slope: 0.01,
        }
    }
}

/// Weights of a pointwise (1x1) 2D convolution used for excitation.
#[derive(Clone, Debug)]
pub struct PointwiseSpec {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// The full parameter set, in forward order.
#[derive(Clone, Debug)]
pub struct MotionNetParams {
    pub down1a: Conv3dSpec,
    pub down1b: Conv3dSpec,
    pub excite1: PointwiseSpec,
    pub down2a: Conv3dSpec,
    pub down2b: Conv3dSpec,
    /// 1x1x1 convolution adjusting the depth extent between encoder and
    /// decoder (stride 1 in this topology; the manifest keeps it explicit).
    pub down2c: Conv3dSpec,
    pub excite2: PointwiseSpec,
    pub up1: Conv3dSpec,
    pub up2a: Conv3dSpec,
    pub up2b: Conv3dSpec,
    pub up2c: Conv3dSpec,
    pub collapse: Conv3dSpec,
    pub negative_slope: f32,
}

/// The depth-collapsed `C x H x W` output.
#[derive(Clone, Debug)]
pub struct MotionFeatures {
    pub data: Tensor,
    /// Resolution ratio of the feature grid to the input image.
    pub stride: usize,
}

fn seeded_conv(
    rng: &mut ChaCha8Rng,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
) -> Conv3dSpec {
    let fan_in = c_in * kernel.0 * kernel.1 * kernel.2;
    let s = (1.0 / fan_in as f32).sqrt();
    let weights =
        Tensor::random_uniform(&[c_out, c_in, kernel.0, kernel.1, kernel.2], -s, s, rng).unwrap();
    let bias = Tensor::zeros(&[c_out]).unwrap();
    Conv3dSpec::new(c_in, c_out, kernel, stride, padding, weights, bias).unwrap()
}

fn seeded_pointwise(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> PointwiseSpec {
    let s = (1.0 / c_in as f32).sqrt();
    PointwiseSpec {
        weights: Tensor::random_uniform(&[c_out, c_in], -s, s, rng).unwrap(),
        bias: Tensor::zeros(&[c_out]).unwrap(),
    }
}

impl MotionNetParams {
    /// Deterministic initialization: uniform weights in `[-s, s]` with
    /// `s = sqrt(1 / fan_in)`, zero biases, one seeded stream in layer order.
    pub fn init(config: &MotionNetConfig, seed: u64) -> Result<MotionNetParams> {
        if config.depth_bins % 4 != 0 || config.depth_bins == 0 {
            return Err(CmfError::invalid(
                "motionnet init",
                format!(
                    "depth bins must be a positive multiple of 4, got {}",
                    config.depth_bins
                ),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let params = MotionNetParams {
            down1a: seeded_conv(
                &mut rng,
                c.volume_channels,
                c.down1_channels,
                (3, 3, 3),
                (2, 2, 2),
                (1, 1, 1),
            ),
            down1b: seeded_conv(
                &mut rng,
                c.down1_channels,
                c.down1_channels,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
            ),
            excite1: seeded_pointwise(&mut rng, c.f2_channels, c.down1_channels),
            down2a: seeded_conv(
                &mut rng,
                c.down1_channels,
                c.down2_channels,
                (3, 3, 3),
                (2, 2, 2),
                (1, 1, 1),
            ),
            down2b: seeded_conv(
                &mut rng,
                c.down2_channels,
                c.down2_channels,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
            ),
            down2c: seeded_conv(
                &mut rng,
                c.down2_channels,
                c.down2_channels,
                (1, 1, 1),
                (1, 1, 1),
                (0, 0, 0),
            ),
            excite2: seeded_pointwise(&mut rng, c.f3_channels, c.down2_channels),
            up1: seeded_conv(
                &mut rng,
                c.down2_channels,
                c.up1_channels,
                (4, 4, 4),
                (2, 2, 2),
                (1, 1, 1),
            ),
            up2a: seeded_conv(
                &mut rng,
                c.up1_channels + c.down1_channels,
                c.up2_channels,
                (4, 4, 4),
                (2, 2, 2),
                (1, 1, 1),
            ),
            up2b: seeded_conv(
                &mut rng,
                c.up2_channels,
                c.up2_channels,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
            ),
            up2c: seeded_conv(
                &mut rng,
                c.up2_channels,
                c.up2_channels,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
            ),
            collapse: seeded_conv(
                &mut rng,
                c.up2_channels,
                c.out_channels,
                (c.depth_bins, 1, 1),
                (1, 1, 1),
                (c.depth_bins - 1, 0, 0),
            ),
            negative_slope: c.negative_slope,
        };
        params.validate()?;
        Ok(params)
    }

    /// Adjacent layers must agree on channel counts and the collapse layer
    /// must reduce the depth extent to exactly 1.
    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        for (name, spec) in &layers {
            spec.validate()
                .map_err(|e| CmfError::invalid("motionnet", format!("layer {name}: {e}")))?;
        }
        let chain = [
            ("down1a", "down1b"),
            ("down1b", "down2a"),
            ("down2a", "down2b"),
            ("down2b", "down2c"),
            ("down2c", "up1"),
            ("up2a", "up2b"),
            ("up2b", "up2c"),
            ("up2c", "collapse"),
        ];
        let get = |n: &str| layers.iter().find(|(ln, _)| *ln == n).unwrap().1;
        for (a, b) in chain {
            if get(a).out_channels != get(b).in_channels {
                return Err(CmfError::shape(
                    "motionnet",
                    format!(
                        "layer {a} feeds {} channels but layer {b} expects {}",
                        get(a).out_channels,
                        get(b).in_channels
                    ),
                ));
            }
        }
        if self.up1.out_channels + self.down1b.out_channels != self.up2a.in_channels {
            return Err(CmfError::shape(
                "motionnet",
                format!(
                    "skip concat yields {} channels but up2a expects {}",
                    self.up1.out_channels + self.down1b.out_channels,
                    self.up2a.in_channels
                ),
            ));
        }
        if self.excite1.weights.dims()[0] != self.down1b.out_channels {
            return Err(CmfError::shape(
                "motionnet",
                "excite1 output channels do not match the first block".to_string(),
            ));
        }
        if self.excite2.weights.dims()[0] != self.down2c.out_channels {
            return Err(CmfError::shape(
                "motionnet",
                "excite2 output channels do not match the second block".to_string(),
            ));
        }
        let d = self.collapse.kernel.0;
        if self.collapse.kernel.1 != 1
            || self.collapse.kernel.2 != 1
            || self.collapse.stride != (1, 1, 1)
            || self.collapse.padding != (d - 1, 0, 0)
        {
            return Err(CmfError::invalid(
                "motionnet",
                format!(
                    "collapse must be kernel (D,1,1), stride 1, padding (D-1,0,0); got kernel {:?} stride {:?} padding {:?}",
                    self.collapse.kernel, self.collapse.stride, self.collapse.padding
                ),
            ));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<(&'static str, &Conv3dSpec)> {
        vec![
            ("down1a", &self.down1a),
            ("down1b", &self.down1b),
            ("down2a", &self.down2a),
            ("down2b", &self.down2b),
            ("down2c", &self.down2c),
            ("up1", &self.up1),
            ("up2a", &self.up2a),
            ("up2b", &self.up2b),
            ("up2c", &self.up2c),
            ("collapse", &self.collapse),
        ]
    }

    fn transposed_layer(name: &str) -> bool {
        matches!(name, "up1" | "up2a" | "collapse")
    }

    /// Write the parameter directory: a `manifest.txt` listing layer order
    /// and geometry, plus one CMFT pair per layer.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CmfError::io(dir, e))?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "slope={}", self.negative_slope);
        for (name, spec) in self.layers() {
            let kind = if Self::transposed_layer(name) {
                "transposed3d"
            } else {
                "conv3d"
            };
            let _ = writeln!(
                manifest,
                "layer={name} kind={kind} in={} out={} kernel={},{},{} stride={},{},{} padding={},{},{}",
                spec.in_channels,
                spec.out_channels,
                spec.kernel.0,
                spec.kernel.1,
                spec.kernel.2,
                spec.stride.0,
                spec.stride.1,
                spec.stride.2,
                spec.padding.0,
                spec.padding.1,
                spec.padding.2,
            );
            write_cmft(dir.join(format!("{name}.weights.cmft")), &spec.weights)?;
            write_cmft(dir.join(format!("{name}.bias.cmft")), &spec.bias)?;
        }
        for (name, pw) in [("excite1", &self.excite1), ("excite2", &self.excite2)] {
            let _ = writeln!(
                manifest,
                "layer={name} kind=pointwise in={} out={}",
                pw.weights.dims()[1],
                pw.weights.dims()[0]
            );
            write_cmft(dir.join(format!("{name}.weights.cmft")), &pw.weights)?;
            write_cmft(dir.join(format!("{name}.bias.cmft")), &pw.bias)?;
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| CmfError::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<MotionNetParams> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| CmfError::io(&path, e))?;
        let mut slope = 0.01f32;
        let mut convs: Vec<(String, String, Conv3dSpec)> = Vec::new();
        let mut pointwise: Vec<(String, PointwiseSpec)> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: std::collections::HashMap<&str, &str> = line
                .split_whitespace()
                .filter_map(|tok| tok.split_once('='))
                .collect();
            if let Some(v) = fields.get("slope") {
                slope = v
                    .parse()
                    .map_err(|_| CmfError::parse(&path, format!("bad slope value {v:?}")))?;
                continue;
            }
            let name = fields
                .get("layer")
                .ok_or_else(|| CmfError::parse(&path, format!("line without layer: {raw:?}")))?
                .to_string();
            let kind = fields
                .get("kind")
                .ok_or_else(|| CmfError::parse(&path, format!("layer {name} missing kind")))?
                .to_string();
            let weights = read_cmft(dir.join(format!("{name}.weights.cmft")))?;
            let bias = read_cmft(dir.join(format!("{name}.bias.cmft")))?;
            if kind == "pointwise" {
                pointwise.push((name, PointwiseSpec { weights, bias }));
                continue;
            }
            let triple = |key: &str| -> Result<(usize, usize, usize)> {
                let v = fields
                    .get(key)
                    .ok_or_else(|| CmfError::parse(&path, format!("layer {name} missing {key}")))?;
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| p.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        CmfError::parse(&path, format!("layer {name}: bad {key} {v:?}"))
                    })?;
                if parts.len() != 3 {
                    return Err(CmfError::parse(
                        &path,
                        format!("layer {name}: {key} needs 3 values"),
                    ));
                }
                Ok((parts[0], parts[1], parts[2]))
            };
            let scalar = |key: &str| -> Result<usize> {
                fields
                    .get(key)
                    .ok_or_else(|| CmfError::parse(&path, format!("layer {name} missing {key}")))?
                    .parse()
                    .map_err(|_| CmfError::parse(&path, format!("layer {name}: bad {key}")))
            };
            let spec = Conv3dSpec::new(
                scalar("in")?,
                scalar("out")?,
                triple("kernel")?,
                triple("stride")?,
                triple("padding")?,
                weights,
                bias,
            )
            .map_err(|e| CmfError::invalid("motionnet load", format!("layer {name}: {e}")))?;
            convs.push((name, kind, spec));
        }
        let mut take_conv = |name: &str| -> Result<Conv3dSpec> {
            let idx = convs
                .iter()
                .position(|(n, _, _)| n == name)
                .ok_or_else(|| CmfError::parse(&path, format!("manifest missing layer {name}")))?;
            let (_, kind, spec) = convs.remove(idx);
            let want = if Self::transposed_layer(name) {
                "transposed3d"
            } else {
                "conv3d"
            };
            if kind != want {
                return Err(CmfError::parse(
                    &path,
                    format!("layer {name} has kind {kind}, expected {want}"),
                ));
            }
            Ok(spec)
        };
        let down1a = take_conv("down1a")?;
        let down1b = take_conv("down1b")?;
        let down2a = take_conv("down2a")?;
        let down2b = take_conv("down2b")?;
        let down2c = take_conv("down2c")?;
        let up1 = take_conv("up1")?;
        let up2a = take_conv("up2a")?;
        let up2b = take_conv("up2b")?;
        let up2c = take_conv("up2c")?;
        let collapse = take_conv("collapse")?;
        let mut take_pw = |name: &str| -> Result<PointwiseSpec> {
            let idx = pointwise
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| CmfError::parse(&path, format!("manifest missing layer {name}")))?;
            Ok(pointwise.remove(idx).1)
        };
        let params = MotionNetParams {
            down1a,
            down1b,
            excite1: take_pw("excite1")?,
            down2a,
            down2b,
            down2c,
            excite2: take_pw("excite2")?,
            up1,
            up2a,
            up2b,
            up2c,
            collapse,
            negative_slope: slope,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Sigmoid-gated channel scaling: `w = sigmoid(pointwise(guide))` has the
/// volume's channel count and its spatial dims; the gate broadcasts across
/// the depth axis.
pub fn guided_excitation(
    volume: &Tensor,
    guide: &Tensor,
    weights: &PointwiseSpec,
) -> Result<Tensor> {
    if volume.rank() != 4 || guide.rank() != 3 {
        return Err(CmfError::shape(
            "guided_excitation",
            format!(
                "volume must be CxDxHxW and guide CgxHxW, got ranks {} and {}",
                volume.rank(),
                guide.rank()
            ),
        ));
    }
    if volume.dims()[2] != guide.dims()[1] || volume.dims()[3] != guide.dims()[2] {
        return Err(CmfError::shape(
            "guided_excitation",
            format!(
                "guide is {}x{} but the volume is {}x{}; supply the scale-matched feature map",
                guide.dims()[2],
                guide.dims()[1],
                volume.dims()[3],
                volume.dims()[2]
            ),
        ));
    }
    let gate = sigmoid(&pointwise_conv2d(guide, &weights.weights, &weights.bias)?);
    if gate.dims()[0] != volume.dims()[0] {
        return Err(CmfError::shape(
            "guided_excitation",
            format!(
                "gate has {} channels but the volume has {}",
                gate.dims()[0],
                volume.dims()[0]
            ),
        ));
    }
    hadamard(volume, &gate)
}

fn stage(name: &'static str, r: Result<Tensor>) -> Result<Tensor> {
    r.map_err(|e| e.in_stage(name))
}

/// Forward pass: cost volume in, depth-collapsed motion features out.
///
/// `f2` must match the spatial dims after the first down block (half the
/// volume's H and W), `f3` those after the second (a quarter).
pub fn forward(
    volume: &CostVolume4D,
    f2: &Tensor,
    f3: &Tensor,
    params: &MotionNetParams,
) -> Result<MotionFeatures> {
    params.validate()?;
    let dims = volume.data.dims().to_vec();
    let (d, h, w) = (dims[0], dims[2], dims[3]);
    if d % 4 != 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(CmfError::shape(
            "motionnet forward",
            format!("volume D, H, W must be divisible by 4 for the skip concat, got {d}x{h}x{w}"),
        ));
    }
    if params.collapse.kernel.0 != d {
        return Err(CmfError::shape(
            "collapse",
            format!(
                "network was built for {} depth bins but the volume has {d}",
                params.collapse.kernel.0
            ),
        ));
    }
    let slope = params.negative_slope;
    let act = |t: Tensor| leaky_relu(&t, slope);

    // channels-first layout for the 3D kernels
    let x = volume.data.swap_axes01()?;
    let x = act(stage("down1a", conv3d(&x, &params.down1a))?);
    let skip = act(stage("down1b", conv3d(&x, &params.down1b))?);
    let x = stage("excite1", guided_excitation(&skip, f2, &params.excite1))?;
    let x = act(stage("down2a", conv3d(&x, &params.down2a))?);
    let x = act(stage("down2b", conv3d(&x, &params.down2b))?);
    let x = act(stage("down2c", conv3d(&x, &params.down2c))?);
    let x = stage("excite2", guided_excitation(&x, f3, &params.excite2))?;
    let x = act(stage("up1", transposed_conv3d(&x, &params.up1))?);
    if x.dims()[1..] != skip.dims()[1..] {
        return Err(CmfError::shape(
            "cat",
            format!(
                "up1 output {:?} does not align with the skip connection {:?}",
                x.dims(),
                skip.dims()
            ),
        ));
    }
    let x = stage("cat", x.concat_axis0(&skip))?;
    let x = act(stage("up2a", transposed_conv3d(&x, &params.up2a))?);
    let x = act(stage("up2b", conv3d(&x, &params.up2b))?);
    let x = act(stage("up2c", conv3d(&x, &params.up2c))?);
    // linear collapse: no activation after the final layer
    let x = stage("collapse", transposed_conv3d(&x, &params.collapse))?;
    if x.dims()[1] != 1 {
        return Err(CmfError::shape(
            "collapse",
            format!(
                "expected depth extent 1 after collapse, got {}",
                x.dims()[1]
            ),
        ));
    }
    if x.dims()[2] != h || x.dims()[3] != w {
        return Err(CmfError::shape(
            "collapse",
            format!(
                "output spatial dims {}x{} do not match the volume's {w}x{h}",
                x.dims()[3],
                x.dims()[2]
            ),
        ));
    }
    let dims = vec![x.dims()[0], h, w];
    let data = Tensor::new(dims, x.into_data())?;
    if !data.is_all_finite() {
        return Err(CmfError::invalid(
            "motionnet forward",
            "non-finite activations in the output features",
        ));
    }
    Ok(MotionFeatures { data, stride: 4 })
}
