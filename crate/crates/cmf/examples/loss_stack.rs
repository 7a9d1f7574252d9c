//! The training loss stack on a synthetic prediction, with a spot check of
//! the analytic gradients against central finite differences.
//!
//! ```bash
//! cargo run --release --example loss_stack
//! ```

use cmf::losses::{
    dice_loss, focal_loss, objectness_bce, pixel_bce, total_loss, LossComponents, LossWeights,
    SoftMask,
};
use cmf::mask::BinaryMask;
use cmf::tensor::Tensor;

fn main() -> cmf::Result<()> {
    // ground truth: a 12x12 blob; prediction: confident inside, noisy band
    // around the boundary
    let gt = BinaryMask::from_rect(16, 16, 3, 3, 12, 12);
    let mut pred_vals = vec![0.08f32; 256];
    for y in 0..16isize {
        for x in 0..16isize {
            let i = (y * 16 + x) as usize;
            if gt.get(x as usize, y as usize) {
                pred_vals[i] = 0.9;
            }
            if (2..=12).contains(&x) && (2..=12).contains(&y) && !gt.get(x as usize, y as usize) {
                pred_vals[i] = 0.35; // halo of uncertainty
            }
        }
    }
    let pred = SoftMask::new(Tensor::new(vec![16, 16], pred_vals.clone())?)?;

    let dice = dice_loss(&pred, &gt)?;
    let bce = pixel_bce(&pred, &gt)?;
    let focal = focal_loss(&[0.72, 0.2, 0.08], 0)?;
    let (obj, obj_grad) = objectness_bce(0.8, true)?;

    let components = LossComponents {
        dice: dice.value,
        pixel_bce: bce.value,
        classification: focal.value,
        objectness: obj,
    };
    let weights = LossWeights::default();
    println!("dice        {:>10.6}", components.dice);
    println!("pixel BCE   {:>10.6}", components.pixel_bce);
    println!("focal       {:>10.6}", components.classification);
    println!(
        "objectness  {:>10.6}  (d/dp = {obj_grad:.4})",
        components.objectness
    );
    println!(
        "total       {:>10.6}  (weights C={} S={} D={} P={})",
        total_loss(&components, &weights),
        weights.lambda_c,
        weights.lambda_s,
        weights.lambda_d,
        weights.lambda_p
    );

    // gradient spot check on a few pixels
    println!("\ngradient check (dice, central differences, h = 1e-4):");
    for &i in &[0usize, 52, 120] {
        let h = 1e-4f32;
        let eval = |vals: &[f32]| {
            let m = SoftMask::new(Tensor::new(vec![16, 16], vals.to_vec()).unwrap()).unwrap();
            dice_loss(&m, &gt).unwrap().value
        };
        let mut hi = pred_vals.clone();
        let mut lo = pred_vals.clone();
        hi[i] += h;
        lo[i] -= h;
        let fd = (eval(&hi) - eval(&lo)) / (hi[i] as f64 - lo[i] as f64);
        println!(
            "  pixel {i:>3}: analytic {:>12.6e}  finite-diff {fd:>12.6e}",
            dice.gradient[i]
        );
    }
    Ok(())
}
