//! Builds a gold standard from five simulated raters of varying quality,
//! one of whom annotates the dimension backwards.

use affect::annotation_fusion::{ewe_fuse, inter_rater_agreement, per_rater_quality, AnnotatorTrace, Dimension};
use affect::metrics::ccc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> affect::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let truth: Vec<f64> = (0..400).map(|t| 0.6 * (t as f64 / 30.0).sin() + 0.2 * (t as f64 / 7.0).cos()).collect();
    let raters = [("careful", 0.05, 1.0), ("average", 0.2, 1.0), ("sloppy", 0.5, 1.0), ("late", 0.15, 1.0), ("inverted", 0.1, -1.0)];
    let traces: Vec<AnnotatorTrace> = raters
        .iter()
        .map(|(name, noise, sign)| {
            let values = truth
                .iter()
                .map(|v| (sign * v + noise * rng.random_range(-1.0..1.0)).clamp(-1.0, 1.0))
                .collect();
            AnnotatorTrace::new(*name, Dimension::Valence, "clip01", values)
        })
        .collect();

    let gold = ewe_fuse(&traces)?;
    let quality = per_rater_quality(&traces)?;
    println!("{:<10} {:>8} {:>8}", "rater", "quality", "weight");
    for (rater, w) in &gold.weights {
        println!("{rater:<10} {:>8.3} {:>8.3}", quality[rater], w);
    }
    let plain_mean: Vec<f64> = (0..truth.len()).map(|t| traces.iter().map(|x| x.values[t]).sum::<f64>() / 5.0).collect();
    println!("\nraters used: {}", gold.raters_used);
    println!("inter-rater agreement: {:.3}", inter_rater_agreement(&traces)?);
    println!("ccc(gold, truth) = {:.4}", ccc(&gold.values, &truth)?);
    println!("ccc(mean, truth) = {:.4}", ccc(&plain_mean, &truth)?);
    Ok(())
}
