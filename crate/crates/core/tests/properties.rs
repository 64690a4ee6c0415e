//! Randomised invariants of the numeric building blocks.

mod common;

use affect::annotation_fusion::{ewe_fuse, AnnotatorTrace, Dimension};
use affect::dataio::{bin_three_classes, make_partitions, synthesize_dataset, Level, Modality, Standardizer, SynthSpec};
use affect::metrics::{ccc, pcc, rmse};
use affect::windowing::{stitch, window_spans, TailRule};
use affect::Tensor2;
use proptest::prelude::*;

fn seq(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn non_constant(v: &[f64]) -> bool {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ccc_is_symmetric_and_bounded((a, b) in (2usize..60).prop_flat_map(|n| (seq(n..n + 1), seq(n..n + 1)))) {
        let c = ccc(&a, &b).unwrap();
        prop_assert_eq!(c, ccc(&b, &a).unwrap());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        // agreement never exceeds correlation in magnitude
        prop_assert!(c.abs() <= pcc(&a, &b).unwrap().abs() + 1e-12);
        prop_assert!(rmse(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn ccc_of_a_sequence_with_itself_is_one(a in seq(2..80)) {
        prop_assume!(non_constant(&a));
        prop_assert!((ccc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn pcc_ignores_positive_affine_maps(a in seq(3..80), b in seq(3..80), m in 0.1f64..10.0, c in -10.0f64..10.0) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        prop_assume!(non_constant(a) && non_constant(b));
        let mapped: Vec<f64> = b.iter().map(|x| m * x + c).collect();
        prop_assert!((pcc(a, b).unwrap() - pcc(a, &mapped).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ewe_is_a_convex_combination(raters in 2usize..6, len in 2usize..40, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let traces: Vec<AnnotatorTrace> = (0..raters)
            .map(|r| AnnotatorTrace::new(format!("r{r}"), Dimension::Valence, "x", (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let g = ewe_fuse(&traces).unwrap();
        let total: f64 = g.weights.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.weights.values().all(|w| *w >= 0.0));
        for t in 0..len {
            let lo = traces.iter().map(|x| x.values[t]).fold(f64::INFINITY, f64::min);
            let hi = traces.iter().map(|x| x.values[t]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(g.values[t] >= lo - 1e-12 && g.values[t] <= hi + 1e-12);
        }
        let mut reversed = traces.clone();
        reversed.reverse();
        prop_assert_eq!(ewe_fuse(&reversed).unwrap(), g);
    }

    #[test]
    fn anchored_windows_cover_every_step(len in 1usize..4000, ws in 1usize..800, hop in 1usize..800) {
        let hs = hop.min(ws);
        let w = window_spans(len, ws, hs, TailRule::AnchoredTail).unwrap();
        let mut covered = vec![false; len];
        for x in &w {
            prop_assert!(x.end() <= len);
            prop_assert_eq!(x.valid_len, ws.min(len));
            covered[x.start..x.end()].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|c| *c));
        prop_assert!(w.windows(2).all(|p| p[0].start < p[1].start));
        // every start but the anchored tail lies on the hop lattice
        prop_assert!(w[..w.len() - 1].iter().all(|x| x.start % hs == 0));
        let dropped = window_spans(len, ws, hs, TailRule::DropTail).unwrap();
        prop_assert!(w.len() - dropped.len() <= 1);
    }

    #[test]
    fn stitching_a_framing_free_predictor_is_exact(len in 1usize..600, ws in 1usize..200, hop in 1usize..200, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let hs = hop.min(ws);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let preds: Vec<(usize, Vec<f64>)> = window_spans(len, ws, hs, TailRule::AnchoredTail)
            .unwrap()
            .iter()
            .map(|w| (w.start, truth[w.start..w.end()].to_vec()))
            .collect();
        prop_assert_eq!(stitch(&preds, len).unwrap(), truth);
    }

    #[test]
    fn binning_depends_only_on_rank(v in prop::collection::vec(prop_oneof![-100.0f64..100.0, Just(1.5), Just(2.5)], 3..200)) {
        let b = bin_three_classes(&v).unwrap();
        let mapped: Vec<f64> = v.iter().map(|x| x.exp2() + 3.0 * x).collect();
        prop_assert_eq!(&bin_three_classes(&mapped).unwrap(), &b);
        let count = |l: Level| b.iter().filter(|x| **x == l).count();
        let sizes = [count(Level::Low), count(Level::Medium), count(Level::High)];
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(b[i] <= b[j]);
                }
            }
        }
    }

    #[test]
    fn standardised_training_data_has_unit_moments(rows in 2usize..50, cols in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect();
        let x = Tensor2::from_vec(rows, cols, data).unwrap();
        let s = Standardizer::fit([&x]).unwrap();
        let z = s.apply(&x).unwrap();
        for c in 0..cols {
            let col = z.col(c);
            let m = col.iter().sum::<f64>() / rows as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / rows as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partitions_never_share_a_speaker(recordings in 3usize..30, speakers in 3usize..12, seed in any::<u64>()) {
        let speakers = speakers.min(recordings);
        let spec = SynthSpec::new(recordings, speakers, (5, 20), vec![Modality::Fau], 0.1);
        let recs = synthesize_dataset(&spec, seed).unwrap();
        let p = make_partitions(&recs, (0.6, 0.2, 0.2), seed).unwrap();
        let map = recs.iter().map(|r| (r.recording_id.clone(), r.speaker_id.clone())).collect();
        prop_assert!(p.check_disjoint(&map).is_ok());
        let total: usize = p.all().iter().map(|x| x.recording_ids.len()).sum();
        prop_assert_eq!(total, recordings);
        prop_assert!(p.all().iter().all(|x| !x.recording_ids.is_empty()));
    }
}
