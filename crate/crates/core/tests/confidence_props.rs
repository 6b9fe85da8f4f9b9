use ctcssl::confidence::{bin_of, calibration_report, train_confidence, ConfidenceRecord, ConfidenceTrainConfig, NUM_BINS};
use ctcssl::decoder::NUM_CONFIDENCE_FEATURES;
use ctcssl::ConfidenceFeatures;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Labels from a fixed hyperplane with a margin; features on wildly different scales.
fn separable(n: usize, seed: u64) -> (Vec<ConfidenceFeatures>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let w = [1.5, -2.0, 0.7, 0.0, 1.0, -0.4, 0.0, 2.2];
    let scale = [1.0, 10.0, 0.1, 5.0, 100.0, 1.0, 3.0, 0.5];
    let mut feats = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while feats.len() < n {
        let z: [f64; NUM_CONFIDENCE_FEATURES] = std::array::from_fn(|_| normal.sample(&mut rng));
        let margin: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3;
        if margin.abs() < 0.25 {
            continue;
        }
        feats.push(ConfidenceFeatures {
            id: format!("c{}", feats.len()),
            values: std::array::from_fn(|k| z[k] * scale[k] + 3.0),
        });
        labels.push(margin > 0.0);
    }
    (feats, labels)
}

#[test]
fn separable_data_is_classified_accurately() {
    let (train_x, train_y) = separable(600, 1);
    let (test_x, test_y) = separable(2000, 2);
    let fit = train_confidence(&train_x, &train_y, &ConfidenceTrainConfig::default()).unwrap();
    let correct = test_x
        .iter()
        .zip(&test_y)
        .filter(|(x, y)| (fit.model.probability(x) >= 0.5) == **y)
        .count();
    let accuracy = correct as f64 / test_y.len() as f64;
    assert!(accuracy >= 0.95, "held-out accuracy {accuracy}");
    assert!(fit.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    let report = calibration_report(&fit.model, &test_x, &test_y);
    assert!(report.rows.windows(2).all(|w| w[0].bin < w[1].bin));
    assert!(report.rows.iter().all(|r| r.count > 0));
    assert_eq!(report.rows.iter().map(|r| r.count).sum::<usize>(), test_x.len());
}

#[test]
fn scores_and_bins_are_consistent_on_random_vectors() {
    let (x, y) = separable(400, 3);
    let model = train_confidence(&x, &y, &ConfidenceTrainConfig::default()).unwrap().model;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scored: Vec<(f64, ConfidenceRecord)> = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        let spread = [1.0, 10.0, 1e3, 1e6][i % 4];
        let f = ConfidenceFeatures {
            id: format!("r{i}"),
            values: std::array::from_fn(|_| rng.random_range(-spread..spread)),
        };
        let p = model.probability(&f);
        let r = model.score(&f);
        assert!((0.0..=1.0).contains(&r.score), "score {}", r.score);
        assert_eq!(r.score, p);
        assert!(r.scaled_score <= 1000);
        assert_eq!(r.scaled_score, (p * 1000.0).round() as u32);
        assert!(r.bin < NUM_BINS);
        assert_eq!(r.bin, ((r.scaled_score / 100) as usize).min(NUM_BINS - 1));
        assert_eq!(r.id, f.id);
        scored.push((p, r));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(scored.windows(2).all(|w| w[0].1.bin <= w[1].1.bin && w[0].1.scaled_score <= w[1].1.scaled_score));
}

proptest! {
    #[test]
    fn bins_partition_the_scaled_range(s in 0u32..=1000) {
        let b = bin_of(s);
        prop_assert!(b < NUM_BINS);
        if s < 1000 {
            prop_assert!(b as u32 * 100 <= s && s < (b as u32 + 1) * 100);
        } else {
            prop_assert_eq!(b, NUM_BINS - 1);
        }
    }

    #[test]
    fn records_clamp_out_of_range_scores(score in -5.0f64..5.0) {
        let r = ConfidenceRecord::from_score("x", score);
        prop_assert!((0.0..=1.0).contains(&r.score));
        prop_assert!(r.scaled_score <= 1000);
        prop_assert_eq!(r.bin, bin_of(r.scaled_score));
    }
}
