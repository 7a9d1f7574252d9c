//! Sweep a family of depth hypotheses and watch the photometric error dip
//! at the true plane depth.
//!
//! ```bash
//! cargo run --release --example plane_sweep_warp
//! ```

use cmf::geometry::{project_plane, warp_feature_plane, Intrinsics, RigidPose};
use cmf::scene::{generate, SceneSpec};

fn main() -> cmf::Result<()> {
    let true_depth = 1.4;
    let pose = RigidPose::new(RigidPose::identity().rotation, [0.25, 0.02, 0.0])?;
    let spec = SceneSpec {
        intrinsics: Intrinsics::new(110.0, 110.0, 63.5, 47.5, 128, 96)?,
        camera_pose: pose.clone(),
        background_depth: true_depth,
        objects: vec![],
        channels: 3,
        texture_period_scale: 1.0,
    };
    let bundle = generate(&spec, 11)?;

    println!("true plane depth: {true_depth}");
    println!("{:>8}  {:>12}", "depth", "warp MAE");
    let plane = 128 * 96;
    for i in 0..15 {
        let depth = 0.8 + i as f64 * 0.1;
        let warped = warp_feature_plane(&bundle.frame_prev, depth, &pose, &spec.intrinsics)?;
        let grid = project_plane(depth, &pose, &spec.intrinsics)?;
        let mut err = 0.0f64;
        let mut n = 0usize;
        for p in 0..plane {
            if !grid.valid[p] {
                continue;
            }
            for c in 0..3 {
                err += (warped.data()[c * plane + p] as f64
                    - bundle.frame_next.data()[c * plane + p] as f64)
                    .abs();
                n += 1;
            }
        }
        let mae = err / n as f64;
        let marker = if (depth - true_depth).abs() < 0.05 {
            "  <- true depth"
        } else {
            ""
        };
        println!("{depth:>8.2}  {mae:>12.5}{marker}");
    }
    Ok(())
}
