//! The two depth-range policies side by side: exponential-moving-average
//! tracking of batch extrema versus the moving-object percentile rule.
//!
//! ```bash
//! cargo run --release --example depth_range_policies
//! ```

use cmf::depthrange::{
    ema_update, percentile_range, preset_names, DepthRange, ObjectDepthSample, PRESETS,
};
use rand::{Rng, SeedableRng};

fn main() -> cmf::Result<()> {
    println!("published presets:");
    for (name, r) in PRESETS {
        println!("  {name:<22} [{:>6.3}, {:>7.3}]", r.d_min, r.d_max);
    }
    println!("(select with --preset {:?} etc.)\n", preset_names()[1]);

    // EMA replay: a stream of batch extrema pulls the range toward them
    // geometrically with ratio 0.99 per step
    let mut range = DepthRange::default_initial();
    println!(
        "EMA replay from [{}, {}] toward batches (2.0, 20.0):",
        range.d_min, range.d_max
    );
    for step in 1..=600usize {
        range = ema_update(&range, 2.0, 20.0)?;
        if [1, 10, 100, 300, 600].contains(&step) {
            println!("  step {step:>4}: [{:.4}, {:.4}]", range.d_min, range.d_max);
        }
    }

    // percentile rule: object mean depths cluster close to the camera with
    // a few spurious far estimates; the 1st/99th percentiles shrug them off
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut samples: Vec<ObjectDepthSample> = (0..800)
        .map(|_| {
            let base: f64 = rng.gen_range(0.0f64..1.0).powf(2.0);
            ObjectDepthSample {
                mean_depth: 0.09 + 2.4 * base,
            }
        })
        .collect();
    for _ in 0..6 {
        samples.push(ObjectDepthSample {
            mean_depth: rng.gen_range(15.0..60.0),
        });
    }
    let naive = percentile_range(&samples, 0.0, 100.0)?;
    let robust = percentile_range(&samples, 1.0, 99.0)?;
    println!(
        "\nper-object mean depths: {} samples, 6 outliers injected",
        samples.len()
    );
    println!(
        "  min/max range      [{:.3}, {:.3}]",
        naive.d_min, naive.d_max
    );
    println!(
        "  1st/99th range     [{:.3}, {:.3}]",
        robust.d_min, robust.d_max
    );
    Ok(())
}
