//! Synthetic two-frame scenes with exact ground truth.
//!
//! A scene is a textured fronto-parallel background plane plus optional
//! textured rectangles floating in front of it, viewed by a camera that
//! moves between the two frames. Rectangles may carry their own 3D velocity,
//! making them independent movers. Both frames are ray-cast analytically
//! against the same world geometry, so static pixels satisfy the exact
//! reprojection relation between the frames; the only discrepancy a warp
//! test sees is its own interpolation error.
//!
//! Textures are band-limited sums of random-phase sinusoids (periods of
//! roughly 14-40 pixels), so bilinear sampling is well conditioned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmfError, Result};
use crate::geometry::{Intrinsics, RigidPose};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// A textured rectangle at constant depth, in front of the background.
///
/// `rect` is `(x0, y0, x1, y1)` in pixel coordinates of the second frame
/// (half-open). `velocity` is the world-space displacement the object
/// underwent between the frames (so at the earlier frame it sat at
/// `position - velocity`).
#[derive(Clone, Debug)]
pub struct SceneObject {
    pub rect: (f64, f64, f64, f64),
    pub depth: f64,
    pub velocity: [f64; 3],
    pub texture_seed: u64,
}

impl SceneObject {
    pub fn is_moving(&self) -> bool {
        self.velocity != [0.0, 0.0, 0.0]
    }
}

/// Full description of a renderable scene.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub intrinsics: Intrinsics,
    /// Frame-to-frame camera pose in the warping direction (maps points in
    /// the second frame's coordinates into the first frame's).
    pub camera_pose: RigidPose,
    pub background_depth: f64,
    pub objects: Vec<SceneObject>,
    pub channels: usize,
    /// Multiplier on the texture periods. Leave at 1.0 for full-resolution
    /// work; use the feature stride (e.g. 4.0) when the frames will be
    /// matched at reduced resolution, so the texture stays band-limited
    /// relative to the coarser grid.
    pub texture_period_scale: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.camera_pose.validate()?;
        if !(self.background_depth > 0.0) {
            return Err(CmfError::invalid(
                "scene",
                format!(
                    "background depth must be positive, got {}",
                    self.background_depth
                ),
            ));
        }
        if self.channels == 0 || self.channels > 4 {
            return Err(CmfError::invalid("scene", "channels must be 1..=4"));
        }
        if !(self.texture_period_scale > 0.0) {
            return Err(CmfError::invalid(
                "scene",
                "texture period scale must be positive",
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.depth > 0.0 && o.depth < self.background_depth) {
                return Err(CmfError::invalid(
                    "scene",
                    format!(
                        "object {i} depth {} must sit in front of the background at {}",
                        o.depth, self.background_depth
                    ),
                ));
            }
            if o.depth - o.velocity[2] <= 0.0 {
                return Err(CmfError::invalid(
                    "scene",
                    format!("object {i} starts behind the camera"),
                ));
            }
            if !(o.rect.0 < o.rect.2 && o.rect.1 < o.rect.3) {
                return Err(CmfError::invalid(
                    "scene",
                    format!("object {i} rect is empty"),
                ));
            }
        }
        Ok(())
    }

    /// Scene spec from a key=value file: `width`, `height`, `channels`,
    /// `fx fy cx cy`, `background_depth`, `pose` (12 floats), and one
    /// `object=x0,y0,x1,y1,depth,vx,vy,vz[,seed]` line per object.
    pub fn from_kv(kv: &crate::kvfile::KvFile) -> Result<SceneSpec> {
        let intrinsics = crate::kvfile::intrinsics_from_kv(kv)?;
        let camera_pose = match kv.get("pose") {
            Some(v) => crate::kvfile::parse_pose("pose", v)?,
            None => RigidPose::identity(),
        };
        let mut objects = Vec::new();
        for (i, line) in kv.get_all("object").into_iter().enumerate() {
            let f = crate::kvfile::parse_floats("object", line)?;
            if f.len() != 8 && f.len() != 9 {
                return Err(CmfError::Format(format!(
                    "object {i}: need x0,y0,x1,y1,depth,vx,vy,vz[,seed], got {} values",
                    f.len()
                )));
            }
            objects.push(SceneObject {
                rect: (f[0], f[1], f[2], f[3]),
                depth: f[4],
                velocity: [f[5], f[6], f[7]],
                texture_seed: if f.len() == 9 {
                    f[8] as u64
                } else {
                    i as u64 + 1
                },
            });
        }
        let spec = SceneSpec {
            intrinsics,
            camera_pose,
            background_depth: kv.require_f64("background_depth")?,
            objects,
            channels: kv.get_usize("channels")?.unwrap_or(3),
            texture_period_scale: kv.get_f64("texture_scale")?.unwrap_or(1.0),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Everything a consumer needs: the two frames, exact depth and pose for
/// the second frame, and the movers' ground-truth masks.
#[derive(Clone, Debug)]
pub struct SceneBundle {
    pub frame_prev: Tensor,
    pub frame_next: Tensor,
    /// Per-pixel depth of `frame_next` in its own camera frame (rank 2).
    pub depth_next: Tensor,
    pub pose: RigidPose,
    pub intrinsics: Intrinsics,
    /// One mask per object with nonzero velocity, in `frame_next` pixels.
    pub motion_masks: Vec<BinaryMask>,
}

const TEXTURE_COMPONENTS: [(f64, f64); 4] = [
    // (pixel period, amplitude); gentle slopes keep bilinear error small
    (40.0, 0.14),
    (28.0, 0.11),
    (20.0, 0.08),
    (14.0, 0.04),
];

#[derive(Clone, Debug)]
struct Texture {
    // per component: world-frequency vector and per-channel phases
    comps: Vec<(f64, f64, f64, Vec<f64>)>,
}

impl Texture {
    fn synthesize(seed: u64, depth: f64, fx: f64, channels: usize, period_scale: f64) -> Texture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = TEXTURE_COMPONENTS
            .iter()
            .map(|&(period, amp)| {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                // world-space frequency giving the requested pixel period
                let jitter: f64 = rng.gen_range(0.9..1.1);
                let f_world = fx / (depth * period * period_scale * jitter);
                let phases = (0..channels)
                    .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                    .collect();
                (f_world * theta.cos(), f_world * theta.sin(), amp, phases)
            })
            .collect();
        Texture { comps }
    }

    fn eval(&self, channel: usize, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for (fx, fy, amp, phases) in &self.comps {
            v += amp * (std::f64::consts::TAU * (fx * x + fy * y) + phases[channel]).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

/// A fronto-parallel plane in world coordinates (the second frame's camera
/// frame), possibly bounded, with a texture anchored at `anchor`.
struct Surface {
    z: f64,
    bounds: Option<(f64, f64, f64, f64)>, // (x0, x1, y0, y1) world units
    anchor: (f64, f64),
    texture: Texture,
}

/// Ray-cast one view. `cam` maps world (second-frame) coordinates into the
/// camera rendering this view. Returns the image, the per-pixel world plane
/// depth, and the per-pixel surface index.
fn render_view(
    surfaces: &[Surface],
    cam: &RigidPose,
    k: &Intrinsics,
    channels: usize,
) -> (Tensor, Tensor, Vec<usize>) {
    let (w, h) = (k.width, k.height);
    let plane = w * h;
    let mut img = vec![0.0f32; channels * plane];
    let mut depth = vec![0.0f32; plane];
    let mut surf_of = vec![usize::MAX; plane];
    let r = &cam.rotation;
    let t = &cam.translation;
    // X_world = s * (R^T ray) - R^T t
    let b = [
        r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2],
        r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2],
        r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2],
    ];
    for v in 0..h {
        let ry = (v as f64 - k.cy) / k.fy;
        for u in 0..w {
            let rx = (u as f64 - k.cx) / k.fx;
            let a = [
                r[0][0] * rx + r[1][0] * ry + r[2][0],
                r[0][1] * rx + r[1][1] * ry + r[2][1],
                r[0][2] * rx + r[1][2] * ry + r[2][2],
            ];
            let mut best_s = f64::INFINITY;
            let mut best = usize::MAX;
            let mut best_xy = (0.0, 0.0);
            for (si, s) in surfaces.iter().enumerate() {
                if a[2] == 0.0 {
                    continue;
                }
                let sray = (s.z + b[2]) / a[2];
                if sray <= 0.0 || sray >= best_s {
                    continue;
                }
                let x = sray * a[0] - b[0];
                let y = sray * a[1] - b[1];
                if let Some((x0, x1, y0, y1)) = s.bounds {
                    if !(x >= x0 && x < x1 && y >= y0 && y < y1) {
                        continue;
                    }
                }
                best_s = sray;
                best = si;
                best_xy = (x, y);
            }
            let i = v * w + u;
            if best != usize::MAX {
                let s = &surfaces[best];
                surf_of[i] = best;
                depth[i] = s.z as f32;
                for c in 0..channels {
                    img[c * plane + i] =
                        s.texture
                            .eval(c, best_xy.0 - s.anchor.0, best_xy.1 - s.anchor.1)
                            as f32;
                }
            }
        }
    }
    let img = Tensor::new(vec![channels, h, w], img).unwrap();
    let depth = Tensor::new(vec![h, w], depth).unwrap();
    (img, depth, surf_of)
}

/// Render the two frames of `spec` deterministically from `seed`.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SceneBundle> {
    spec.validate()?;
    let k = &spec.intrinsics;
    let channels = spec.channels;

    // world-space rectangle of each object in the second frame
    let world_rect = |o: &SceneObject| -> (f64, f64, f64, f64) {
        (
            (o.rect.0 - k.cx) / k.fx * o.depth,
            (o.rect.2 - k.cx) / k.fx * o.depth,
            (o.rect.1 - k.cy) / k.fy * o.depth,
            (o.rect.3 - k.cy) / k.fy * o.depth,
        )
    };

    // nearest first so the first ray hit wins correctly is irrelevant --
    // render_view keeps the smallest ray parameter -- but a stable order
    // keeps surface indexing deterministic
    let mut order: Vec<usize> = (0..spec.objects.len()).collect();
    order.sort_by(|&a, &b| {
        spec.objects[a]
            .depth
            .partial_cmp(&spec.objects[b].depth)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut surfaces_next = Vec::new();
    let mut surfaces_prev = Vec::new();
    let mut moving_surface_ids = Vec::new();
    for (slot, &oi) in order.iter().enumerate() {
        let o = &spec.objects[oi];
        let (x0, x1, y0, y1) = world_rect(o);
        let tex = Texture::synthesize(
            seed.wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(o.texture_seed),
            o.depth,
            k.fx,
            channels,
            spec.texture_period_scale,
        );
        let anchor = (x0, y0);
        surfaces_next.push(Surface {
            z: o.depth,
            bounds: Some((x0, x1, y0, y1)),
            anchor,
            texture: tex.clone(),
        });
        let v = &o.velocity;
        surfaces_prev.push(Surface {
            z: o.depth - v[2],
            bounds: Some((x0 - v[0], x1 - v[0], y0 - v[1], y1 - v[1])),
            anchor: (anchor.0 - v[0], anchor.1 - v[1]),
            texture: tex,
        });
        if o.is_moving() {
            moving_surface_ids.push(slot);
        }
    }
    let bg_tex = Texture::synthesize(
        seed.wrapping_mul(0x9e3779b97f4a7c15),
        spec.background_depth,
        k.fx,
        channels,
        spec.texture_period_scale,
    );
    for surfaces in [&mut surfaces_next, &mut surfaces_prev] {
        surfaces.push(Surface {
            z: spec.background_depth,
            bounds: None,
            anchor: (0.0, 0.0),
            texture: bg_tex.clone(),
        });
    }

    let (frame_next, depth_next, surf_of) =
        render_view(&surfaces_next, &RigidPose::identity(), k, channels);
    let (frame_prev, _, _) = render_view(&surfaces_prev, &spec.camera_pose, k, channels);

    let motion_masks = moving_surface_ids
        .iter()
        .map(|&sid| {
            let data = surf_of.iter().map(|&s| s == sid).collect();
            BinaryMask::new(k.width, k.height, data)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SceneBundle {
        frame_prev,
        frame_next,
        depth_next,
        pose: spec.camera_pose.clone(),
        intrinsics: *k,
        motion_masks,
    })
}
