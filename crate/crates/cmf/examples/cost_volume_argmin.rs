//! Build a 4D cost volume over a scene with an independent mover and look
//! at the per-pixel argmin depth: continuous over the static scene,
//! scrambled inside the mover.
//!
//! ```bash
//! cargo run --release --example cost_volume_argmin
//! ```

use cmf::costvolume::{build_cost_volume, channel_mean_volume, depth_argmin_map, DepthSamples};
use cmf::depthrange::DepthRange;
use cmf::geometry::{Intrinsics, RigidPose};
use cmf::scene::{generate, SceneObject, SceneSpec};

fn main() -> cmf::Result<()> {
    let pose = RigidPose::new(RigidPose::identity().rotation, [0.28, 0.01, 0.0])?;
    let spec = SceneSpec {
        intrinsics: Intrinsics::new(110.0, 110.0, 63.5, 39.5, 128, 80)?,
        camera_pose: pose.clone(),
        background_depth: 1.6,
        objects: vec![SceneObject {
            rect: (40.0, 20.0, 90.0, 60.0),
            depth: 1.1,
            velocity: [0.12, 0.04, 0.0],
            texture_seed: 5,
        }],
        channels: 3,
        texture_period_scale: 1.0,
    };
    let bundle = generate(&spec, 3)?;

    let range = DepthRange::new(0.7, 2.3)?;
    let samples = DepthSamples::linear(&range, 64)?;
    let volume = build_cost_volume(
        &bundle.frame_prev,
        &bundle.frame_next,
        &samples,
        &pose,
        &spec.intrinsics,
    )?;
    println!(
        "cost volume {:?}, bin width {:.4}",
        volume.data.dims(),
        samples.bin_width()
    );

    let argmin = depth_argmin_map(&channel_mean_volume(&volume), &samples)?;
    let mask = &bundle.motion_masks[0];
    let plane = 128 * 80;
    let (mut em, mut nm, mut es, mut ns) = (0.0f64, 0usize, 0.0f64, 0usize);
    for i in 0..plane {
        let err = (argmin.data()[i] as f64 - bundle.depth_next.data()[i] as f64).abs();
        if mask.data()[i] {
            em += err;
            nm += 1;
        } else {
            es += err;
            ns += 1;
        }
    }
    println!("mean |argmin - truth| inside mover:  {:.4}", em / nm as f64);
    println!("mean |argmin - truth| static region: {:.4}", es / ns as f64);
    println!(
        "inconsistency ratio: {:.1}x",
        (em / nm as f64) / (es / ns as f64)
    );

    let out = std::path::Path::new("example-output/costvolume");
    std::fs::create_dir_all(out).unwrap();
    cmf::imgio::depth_to_pgm(out.join("argmin.pgm"), &argmin, range.d_min, range.d_max)?;
    println!(
        "wrote {} (movers show up as speckle)",
        out.join("argmin.pgm").display()
    );
    Ok(())
}
