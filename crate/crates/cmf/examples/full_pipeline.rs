//! The whole pipeline on a generated scene: features, plane sweep, motion
//! features, instance decoding, and metric evaluation against the scene's
//! own ground truth.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use cmf::depthrange::DepthRange;
use cmf::geometry::{Intrinsics, RigidPose};
use cmf::mask::BinaryMask;
use cmf::metrics::InstanceSet;
use cmf::pipeline::{run_pipeline, MotionNetWidths, PipelineConfig, RangeChoice};
use cmf::scene::{generate, SceneObject, SceneSpec};

fn main() -> cmf::Result<()> {
    let pose = RigidPose::new(RigidPose::identity().rotation, [0.22, 0.01, 0.0])?;
    let spec = SceneSpec {
        intrinsics: Intrinsics::new(100.0, 100.0, 63.5, 31.5, 128, 64)?,
        camera_pose: pose,
        background_depth: 1.6,
        objects: vec![SceneObject {
            rect: (40.0, 16.0, 88.0, 52.0),
            depth: 1.0,
            velocity: [0.1, 0.02, 0.0],
            texture_seed: 3,
        }],
        channels: 3,
        texture_period_scale: 4.0,
    };
    let bundle = generate(&spec, 7)?;

    let config = PipelineConfig {
        range: RangeChoice::Explicit(DepthRange::new(0.6, 2.2)?),
        bins: 16,
        feature_channels: 8,
        f2_channels: 8,
        f3_channels: 8,
        net_widths: MotionNetWidths {
            down1: 8,
            down2: 12,
            up1: 8,
            up2: 8,
            out: 8,
        },
        n_maps: 8,
        seed: 0,
        log: true,
        ..PipelineConfig::default()
    };

    // feature-resolution ground truth from the scene's mover mask
    let m = &bundle.motion_masks[0];
    let (fw, fh) = (128 / 4, 64 / 4);
    let mut gt_mask = BinaryMask::empty(fw, fh);
    for y in 0..fh {
        for x in 0..fw {
            let covered = (0..4)
                .flat_map(|dy| (0..4).map(move |dx| (dx, dy)))
                .filter(|&(dx, dy)| m.get(x * 4 + dx, y * 4 + dy))
                .count();
            if covered >= 8 {
                gt_mask.set(x, y, true);
            }
        }
    }
    let gt = InstanceSet::from_masks(fw, fh, vec![gt_mask])?;

    let out = run_pipeline(
        &bundle.frame_prev,
        &bundle.frame_next,
        &bundle.pose,
        &spec.intrinsics,
        &config,
        Some(&gt),
    )?;

    println!();
    println!(
        "depth samples: {} bins over [{:.2}, {:.2}]",
        out.samples.len(),
        out.samples.d_min(),
        out.samples.d_max()
    );
    println!("motion features: {:?}", out.motion_features.data.dims());

    // the argmin map carries real signal even without training: the mover
    // breaks reprojection consistency, so its depths come out scrambled
    let (mut em, mut nm, mut es, mut ns) = (0.0f64, 0usize, 0.0f64, 0usize);
    for y in 0..fh {
        for x in 0..fw {
            let truth = bundle.depth_next.at(&[y * 4 + 2, x * 4 + 2]) as f64;
            let err = (out.argmin_map.at(&[y, x]) as f64 - truth).abs();
            if gt.masks()[0].get(x, y) {
                em += err;
                nm += 1;
            } else {
                es += err;
                ns += 1;
            }
        }
    }
    println!(
        "argmin depth error: {:.3} inside the mover vs {:.3} elsewhere ({:.1}x)",
        em / nm as f64,
        es / ns as f64,
        (em / nm as f64) / (es / ns as f64)
    );

    println!("instances decoded: {}", out.prediction.len());
    if let Some(r) = &out.report {
        println!(
            "against ground truth: SQ {:.3} RQ {:.3} CAQ {:.3} F {:.3} BgIoU {:.3}",
            r.sq, r.rq, r.caq, r.f_measure, r.bg_iou
        );
        println!("(untrained seeded weights decode near-uniform masks; load trained");
        println!(" weights via PipelineConfig::decoder_weights for meaningful masks)");
    }

    let dir = std::path::Path::new("example-output/pipeline");
    std::fs::create_dir_all(dir).unwrap();
    let ids = cmf::imgio::instances_to_index_map(&out.prediction)?;
    cmf::imgio::write_color_index_map(
        dir.join("instances.ppm"),
        out.prediction.width(),
        out.prediction.height(),
        &ids,
    )?;
    cmf::imgio::depth_to_pgm(
        dir.join("argmin.pgm"),
        &out.argmin_map,
        out.samples.d_min(),
        out.samples.d_max(),
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}
