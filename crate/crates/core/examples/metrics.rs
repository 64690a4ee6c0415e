//! Agreement metrics on a few hand-made predictions.
//!
//! CCC punishes both a constant offset and a wrong scale, PCC only cares
//! about correlation, RMSE about absolute distance.

use affect::metrics::{ccc, pcc, rmse, MetricReport, PartitionReport};

fn main() -> affect::Result<()> {
    let label: Vec<f64> = (0..100).map(|t| (t as f64 / 8.0).sin()).collect();
    let cases: [(&str, Vec<f64>); 4] = [
        ("exact", label.clone()),
        ("offset +0.5", label.iter().map(|v| v + 0.5).collect()),
        ("half scale", label.iter().map(|v| v * 0.5).collect()),
        ("lagged 3 steps", (0..100).map(|t| label[t.max(3) - 3]).collect()),
    ];
    println!("{:<16} {:>8} {:>8} {:>8}", "prediction", "ccc", "pcc", "rmse");
    for (name, pred) in &cases {
        println!("{name:<16} {:>8.4} {:>8.4} {:>8.4}", ccc(pred, &label)?, pcc(pred, &label)?, rmse(pred, &label)?);
    }

    // a constant prediction has no variance, so PCC is undefined: reported as 0 and flagged
    let flat = MetricReport::compute(&[0.2; 100], &label)?;
    println!("\nconstant prediction: ccc {:.4} pcc {} degenerate {}", flat.ccc, flat.pcc, flat.degenerate);

    // partition scores concatenate recordings before computing CCC
    let preds = [cases[1].1[..50].to_vec(), cases[2].1[50..].to_vec()];
    let labels = [label[..50].to_vec(), label[50..].to_vec()];
    let report = PartitionReport::compute(&preds, &labels)?;
    println!("partition ccc {:.4}, per recording {:?}", report.global.ccc, report.per_recording_ccc);
    Ok(())
}
