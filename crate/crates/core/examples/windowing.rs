//! Cuts a recording into overlapping windows and stitches per-window
//! outputs back together.

use affect::annotation_fusion::Dimension;
use affect::dataio::{synthesize_dataset, Modality, SynthSpec};
use affect::windowing::{segment, stitch, TailRule};

fn main() -> affect::Result<()> {
    let spec = SynthSpec::new(1, 1, (1030, 1030), vec![Modality::Fau], 0.1);
    let rec = synthesize_dataset(&spec, 3)?.remove(0);
    for (ws, hs) in [(750, 250), (200, 100), (100, 25)] {
        let anchored = segment(&rec, ws, hs, TailRule::AnchoredTail)?;
        let dropped = segment(&rec, ws, hs, TailRule::DropTail)?;
        let starts: Vec<usize> = anchored.windows.iter().map(|w| w.start).collect();
        println!(
            "ws {ws:>3} hs {hs:>3}: {} windows, {} uncovered steps without the tail window; starts {:?}{}",
            anchored.windows.len(),
            dropped.uncovered().len(),
            &starts[..starts.len().min(6)],
            if starts.len() > 6 { " ..." } else { "" }
        );
    }

    // stitching the label slices of every window returns the labels
    let labels = &rec.labels[&Dimension::Trustworthiness];
    let set = segment(&rec, 200, 50, TailRule::AnchoredTail)?;
    let slabs = set.slabs(&rec.features[&Modality::Fau].matrix, labels)?;
    let pieces: Vec<(usize, Vec<f64>)> = slabs.iter().map(|s| (s.start, s.labels.clone())).collect();
    let back = stitch(&pieces, rec.len())?;
    println!("\nstitched labels identical: {}", back == *labels);

    // shorter than one window: a single zero-padded slab with a mask
    let short = SynthSpec::new(1, 1, (120, 120), vec![Modality::Fau], 0.1);
    let rec = synthesize_dataset(&short, 4)?.remove(0);
    let set = segment(&rec, 200, 100, TailRule::AnchoredTail)?;
    let slab = &set.slabs(&rec.features[&Modality::Fau].matrix, &rec.labels[&Dimension::Trustworthiness])?[0];
    println!("120-step recording: {} rows, {} valid", slab.features.rows(), slab.mask.iter().filter(|m| **m).count());
    Ok(())
}
