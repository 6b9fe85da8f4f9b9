use ctcssl::kd::{
    concatenated_training_set, generate_pseudo_labels, label_posteriors, ssl_training_set, DataPool, LabelledRef,
    Provenance, PseudoLabeledUtterance, UnlabelledRef,
};
use ctcssl::train::{dataset_ctc_loss, CtcExample};
use ctcssl::{FeatureMatrix, LabelSequence, LogProbMatrix, ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BLANK: usize = 0;

/// Per-frame argmax with ties to the lowest index, then merge repeats and
/// drop blanks.
fn argmax_collapse(post: &LogProbMatrix) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..post.frames() {
        let mut best = 0;
        for k in 1..post.num_labels() {
            if post.get(t, k) > post.get(t, best) {
                best = k;
            }
        }
        if prev != Some(best) && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

fn random_posteriors(rng: &mut ChaCha8Rng) -> LogProbMatrix {
    let frames = rng.random_range(0..=30);
    let labels = rng.random_range(2..=8);
    // Coarse logits make exact ties common; a blank bias makes empty results common.
    let coarse = rng.random_bool(0.3);
    let blank_bias = rng.random_range(0.0..3.0);
    let logits = (0..frames * labels)
        .map(|i| {
            let v: f64 = if coarse {
                rng.random_range(0..3) as f64
            } else {
                rng.random_range(-4.0..4.0)
            };
            if i % labels == BLANK { v + blank_bias } else { v }
        })
        .collect();
    LogProbMatrix::from_logits(frames, labels, logits).unwrap()
}

#[test]
fn pseudo_labels_equal_argmax_collapse_on_random_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut dropped = 0;
    for i in 0..1000 {
        let post = random_posteriors(&mut rng);
        let expected = argmax_collapse(&post);
        match label_posteriors(&format!("u{i}"), &post, BLANK, Provenance::Teacher) {
            Some(l) => {
                assert_eq!(l.pseudo_label.symbols(), expected.as_slice(), "matrix {i}");
                assert_eq!(l.provenance, Provenance::Teacher);
            }
            None => {
                assert!(expected.is_empty(), "matrix {i} dropped but oracle gives {expected:?}");
                dropped += 1;
            }
        }
    }
    assert!(dropped > 0 && dropped < 1000);
}

#[test]
fn model_pseudo_labels_equal_oracle_on_forward_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for m in 0..20 {
        let config = ModelConfig {
            input_dim: 4,
            hidden_units: 6,
            num_layers: 1,
            bidirectional: m % 2 == 0,
            num_labels: 5,
            seed: m,
        };
        let mut params = ModelParams::init(config).unwrap();
        for w in params.flat_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let feats: Vec<FeatureMatrix> = (0..10)
            .map(|_| {
                let t = rng.random_range(1..20);
                FeatureMatrix::new(t, 4, (0..t * 4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
            })
            .collect();
        let ids: Vec<String> = (0..feats.len()).map(|i| format!("m{m}-{i}")).collect();
        let refs: Vec<UnlabelledRef<'_>> = ids.iter().zip(&feats).map(|(id, f)| UnlabelledRef { id, features: f }).collect();
        let out = generate_pseudo_labels(&params, &refs, BLANK).unwrap();
        let mut expected = Vec::new();
        for r in &refs {
            let hyp = argmax_collapse(&params.forward(r.features).unwrap());
            if !hyp.is_empty() {
                expected.push((r.id.to_string(), hyp));
            }
        }
        assert_eq!(out.dropped, refs.len() - expected.len());
        let got: Vec<(String, Vec<usize>)> = out.labels.iter().map(|l| (l.id.clone(), l.pseudo_label.symbols().to_vec())).collect();
        assert_eq!(got, expected);
    }
}

struct Utt {
    id: String,
    features: FeatureMatrix,
    target: LabelSequence,
}

fn utterances(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Utt> {
    (0..n)
        .map(|i| {
            let t: usize = rng.random_range(2..12);
            let len = rng.random_range(1..=t.div_ceil(2));
            Utt {
                id: format!("x{i}"),
                features: FeatureMatrix::new(t, dim, (0..t * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                target: LabelSequence::from_symbols((0..len).map(|_| rng.random_range(1..4)).collect()),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn combined_loss_is_sum_of_partial_losses(
        seed in any::<u64>(),
        n in 2usize..30,
        split_mask in prop::collection::vec(any::<bool>(), 30),
        shuffle_seed in any::<u64>(),
        weight in prop_oneof![Just(1.0), 0.0f64..3.0],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utts = utterances(&mut rng, n, 3);
        let params = ModelParams::init(ModelConfig::student(3, 4, seed)).unwrap();
        let (lab, unl): (Vec<&Utt>, Vec<&Utt>) = utts.iter().partition(|u| {
            let i: usize = u.id[1..].parse().unwrap();
            split_mask[i]
        });
        let pool_lab: Vec<LabelledRef<'_>> = lab.iter().map(|u| LabelledRef { id: &u.id, features: &u.features, reference: &u.target }).collect();
        let pool_unl: Vec<UnlabelledRef<'_>> = unl.iter().map(|u| UnlabelledRef { id: &u.id, features: &u.features }).collect();
        let mut pool = DataPool::new(pool_lab, pool_unl).unwrap();
        pool.pseudo_labelled = unl
            .iter()
            .map(|u| PseudoLabeledUtterance {
                id: u.id.clone(),
                pseudo_label: u.target.clone(),
                teacher_path_log_score: 0.0,
                provenance: Provenance::Teacher,
            })
            .collect();

        let part_l: Vec<CtcExample<'_>> = lab.iter().map(|u| CtcExample { id: &u.id, features: &u.features, target: &u.target, weight: 1.0 }).collect();
        let part_u: Vec<CtcExample<'_>> = unl.iter().map(|u| CtcExample { id: &u.id, features: &u.features, target: &u.target, weight }).collect();
        let l = dataset_ctc_loss(&params, &part_l, BLANK).unwrap();
        let u = dataset_ctc_loss(&params, &part_u, BLANK).unwrap();

        let concatenated = concatenated_training_set(&pool, weight);
        prop_assert_eq!(concatenated.len(), n);
        let combined = dataset_ctc_loss(&params, &concatenated, BLANK).unwrap();
        prop_assert!((combined - (l + u)).abs() <= 1e-10 * combined.abs().max(1.0), "{} vs {}", combined, l + u);

        let shuffled = ssl_training_set(&pool, weight, shuffle_seed).unwrap();
        let mixed = dataset_ctc_loss(&params, &shuffled, BLANK).unwrap();
        prop_assert!((mixed - (l + u)).abs() <= 1e-10 * mixed.abs().max(1.0));
    }
}
