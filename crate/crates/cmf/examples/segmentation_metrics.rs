//! Class-agnostic quality on hand-built instance sets: matching, SQ/RQ/CAQ,
//! pixel F-measure, and background IoU.
//!
//! ```bash
//! cargo run --release --example segmentation_metrics
//! ```

use cmf::mask::BinaryMask;
use cmf::metrics::{evaluate, match_instances, InstanceSet};

fn main() -> cmf::Result<()> {
    let (w, h) = (64, 48);
    // ground truth: three movers
    let gt = InstanceSet::from_masks(
        w,
        h,
        vec![
            BinaryMask::from_rect(w, h, 4, 6, 20, 22),
            BinaryMask::from_rect(w, h, 30, 10, 50, 30),
            BinaryMask::from_rect(w, h, 10, 32, 26, 44),
        ],
    )?;
    // predictions: one dead on, one shifted, one missed, one spurious
    let pred = InstanceSet::new(
        w,
        h,
        vec![
            BinaryMask::from_rect(w, h, 4, 6, 20, 22),   // exact
            BinaryMask::from_rect(w, h, 33, 12, 53, 32), // shifted overlap
            BinaryMask::from_rect(w, h, 52, 38, 62, 46), // matches nothing
        ],
        vec![0.95, 0.8, 0.6],
    )?;

    let matching = match_instances(&pred, &gt)?;
    println!("matched pairs (pred, gt, IoU):");
    for (p, g, iou) in &matching.pairs {
        println!("  pred {p} <-> gt {g}  IoU {iou:.3}");
    }
    println!("unmatched predictions: {:?}", matching.unmatched_pred);
    println!("missed ground truth:   {:?}", matching.unmatched_gt);

    let report = evaluate(&pred, &gt)?;
    println!("\nSQ  {:.4}   (mean IoU over matches)", report.sq);
    println!(
        "RQ  {:.4}   (TP / (TP + FN); false positives do not enter)",
        report.rq
    );
    println!("CAQ {:.4}   (SQ x RQ)", report.caq);
    println!(
        "RQ_panoptic {:.4}   (TP / (TP + FP/2 + FN/2), for comparison)",
        report.rq_panoptic
    );
    println!("pixel F on unions {:.4}", report.f_measure);
    println!("background IoU    {:.4}", report.bg_iou);

    // the spurious prediction never touches SQ/RQ/CAQ
    let trimmed = InstanceSet::new(
        w,
        h,
        pred.masks()[..2].to_vec(),
        pred.scores()[..2].to_vec(),
    )?;
    let r2 = evaluate(&trimmed, &gt)?;
    assert_eq!((r2.sq, r2.rq, r2.caq), (report.sq, report.rq, report.caq));
    println!("\ndropping the spurious instance leaves SQ/RQ/CAQ untouched");
    Ok(())
}
