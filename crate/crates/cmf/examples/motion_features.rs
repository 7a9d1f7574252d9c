//! Extract channel-wise motion features from a cost volume and compare the
//! activation statistics inside and outside a mover's footprint.
//!
//! ```bash
//! cargo run --release --example motion_features
//! ```

use cmf::costvolume::{build_cost_volume, DepthSamples};
use cmf::depthrange::DepthRange;
use cmf::features::extract_features;
use cmf::geometry::{Intrinsics, RigidPose};
use cmf::motionnet::{forward, MotionNetConfig, MotionNetParams};
use cmf::scene::{generate, SceneObject, SceneSpec};

fn main() -> cmf::Result<()> {
    let pose = RigidPose::new(RigidPose::identity().rotation, [0.3, 0.02, 0.0])?;
    let spec = SceneSpec {
        intrinsics: Intrinsics::new(160.0, 160.0, 191.5, 79.5, 384, 160)?,
        camera_pose: pose.clone(),
        background_depth: 1.4,
        objects: vec![SceneObject {
            rect: (120.0, 40.0, 300.0, 130.0),
            depth: 1.1,
            velocity: [0.3, 0.05, 0.0],
            texture_seed: 4,
        }],
        channels: 3,
        texture_period_scale: 4.0,
    };
    let bundle = generate(&spec, 41)?;

    // features at 1/4, guides at 1/8 and 1/16, all sharing one seed family
    let channels = 8;
    let f_prev = extract_features(&bundle.frame_prev, channels, 4, 0)?;
    let f_next = extract_features(&bundle.frame_next, channels, 4, 0)?;
    let f2 = extract_features(&bundle.frame_next, channels, 8, 8)?;
    let f3 = extract_features(&bundle.frame_next, channels, 16, 16)?;

    let samples = DepthSamples::linear(&DepthRange::new(1.0, 1.8)?, 16)?;
    let volume = build_cost_volume(
        &f_prev,
        &f_next,
        &samples,
        &pose,
        &spec.intrinsics.scaled(0.25)?,
    )?;
    println!("cost volume {:?}", volume.data.dims());

    let config = MotionNetConfig {
        volume_channels: channels,
        down1_channels: channels,
        down2_channels: 12,
        up1_channels: channels,
        up2_channels: channels,
        out_channels: channels,
        f2_channels: channels,
        f3_channels: channels,
        depth_bins: 16,
        negative_slope: 0.01,
    };
    let params = MotionNetParams::init(&config, 0)?;
    let features = forward(&volume, &f2, &f3, &params)?;
    println!("motion features {:?}", features.data.dims());

    // mover mask at feature resolution; restrict the comparison to pixels
    // observable at every hypothesis depth, since the frustum border rides
    // on sentinel costs and would drown the content statistics
    let mask = &bundle.motion_masks[0];
    let (fh, fw) = (160 / 4, 384 / 4);
    let plane = fh * fw;
    let inside: Vec<bool> = (0..plane)
        .map(|i| {
            let (x, y) = (i % fw, i / fw);
            (0..4).any(|dy| (0..4).any(|dx| mask.get(x * 4 + dx, y * 4 + dy)))
        })
        .collect();
    let bins = volume.samples.len();
    let interior: Vec<bool> = (0..plane)
        .map(|i| (0..bins).all(|d| volume.valid[d * plane + i]))
        .collect();

    println!(
        "{:>4} {:>14} {:>14} {:>8}",
        "ch", "mover |act|", "static |act|", "ratio"
    );
    for c in 0..channels {
        let slab = &features.data.data()[c * plane..][..plane];
        let (mut mi, mut ni, mut mo, mut no) = (0.0f64, 0usize, 0.0f64, 0usize);
        for (i, &within) in inside.iter().enumerate() {
            if !interior[i] {
                continue;
            }
            let v = slab[i].abs() as f64;
            if within {
                mi += v;
                ni += 1;
            } else {
                mo += v;
                no += 1;
            }
        }
        let (a, b) = (mi / ni as f64, mo / no as f64);
        println!("{c:>4} {a:>14.6} {b:>14.6} {:>8.2}", a / b);
    }

    let out = std::path::Path::new("example-output/motion-features");
    let n = cmf::imgio::write_channel_heatmaps(out, &features.data)?;
    println!("wrote {n} channel heatmaps under {}", out.display());
    Ok(())
}
