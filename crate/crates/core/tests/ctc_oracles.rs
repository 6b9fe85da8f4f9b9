use ctcssl::ctc::{brute_force_log_likelihood, collapse, ctc_log_likelihood, ctc_loss_and_grad, LogLikelihood};
use ctcssl::kd::frame_kd_loss;
use ctcssl::train::frame_cross_entropy;
use ctcssl::{FeatureMatrix, LabelSequence, LogProbMatrix, ModelConfig, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BLANK: usize = 0;

/// Merge runs of equal labels, then drop blanks: two passes, on purpose
/// unlike the library's single pass.
fn collapse_oracle(path: &[usize], blank: usize) -> Vec<usize> {
    let mut merged: Vec<usize> = Vec::new();
    for &l in path {
        if merged.last() != Some(&l) {
            merged.push(l);
        }
    }
    merged.into_iter().filter(|&l| l != blank).collect()
}

fn random_logits(rng: &mut ChaCha8Rng, frames: usize, labels: usize, scale: f64) -> Vec<f64> {
    (0..frames * labels).map(|_| rng.random_range(-scale..scale)).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Enumerates every path and sums the ones that collapse to `target`.
fn enumerate_log_likelihood(post: &LogProbMatrix, target: &[usize]) -> f64 {
    let (t, z) = (post.frames(), post.num_labels());
    let mut terms = Vec::new();
    let mut path = vec![0usize; t];
    let total = z.pow(t as u32);
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % z;
            c /= z;
        }
        if collapse_oracle(&path, BLANK) == target {
            terms.push(path.iter().enumerate().map(|(f, &k)| post.get(f, k)).sum());
        }
    }
    log_sum_exp(&terms)
}

/// Five-point central difference of `f` along coordinate `i`.
fn central_difference(x: &[f64], i: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let at = |d: f64| {
        let mut p = x.to_vec();
        p[i] += d;
        f(&p)
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[test]
fn forward_matches_enumeration_on_seeded_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut infeasible = 0;
    for _ in 0..100 {
        let frames = rng.random_range(1..=8);
        let labels = rng.random_range(2..=4);
        let post = LogProbMatrix::from_logits(frames, labels, random_logits(&mut rng, frames, labels, 3.0)).unwrap();
        let target: Vec<usize> = if rng.random_bool(0.8) {
            let path: Vec<usize> = (0..frames).map(|_| rng.random_range(0..labels)).collect();
            collapse_oracle(&path, BLANK)
        } else {
            let len = rng.random_range(0..=frames);
            (0..len).map(|_| rng.random_range(1..labels)).collect()
        };
        let expected = enumerate_log_likelihood(&post, &target);
        let seq = LabelSequence::from_symbols(target.clone());
        let got = ctc_log_likelihood(&post, &seq, BLANK).unwrap();
        let brute = brute_force_log_likelihood(&post, &seq, BLANK).unwrap();
        if expected == f64::NEG_INFINITY {
            infeasible += 1;
            assert_eq!(got, LogLikelihood::Infeasible, "target {target:?}");
            assert_eq!(brute, f64::NEG_INFINITY);
        } else {
            let v = got.value();
            assert!(rel_err(v, expected, 0.0) <= 1e-10, "forward {v} vs {expected} for {target:?}");
            assert!(rel_err(brute, expected, 0.0) <= 1e-10);
        }
    }
    assert!(infeasible < 100);
}

fn all_sequences(max_len: usize, symbols: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &k in symbols {
                let mut e: Vec<usize> = s.clone();
                e.push(k);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn likelihoods_of_all_label_sequences_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for frames in 1..=4 {
        for labels in 2..=3 {
            for _ in 0..10 {
                let post = LogProbMatrix::from_logits(frames, labels, random_logits(&mut rng, frames, labels, 4.0)).unwrap();
                let symbols: Vec<usize> = (1..labels).collect();
                let total: f64 = all_sequences(frames, &symbols)
                    .into_iter()
                    .map(|h| ctc_log_likelihood(&post, &LabelSequence::from_symbols(h), BLANK).unwrap().value().exp())
                    .sum();
                assert!((total - 1.0).abs() <= 1e-8, "sum {total} at {frames}x{labels}");
            }
        }
    }
}

#[test]
fn collapse_matches_definition_on_every_short_path() {
    let mut checked = 0;
    for len in 0..=6u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            let path: Vec<usize> = (0..len)
                .map(|_| {
                    let l = c % 3;
                    c /= 3;
                    l
                })
                .collect();
            assert_eq!(collapse(&path, BLANK).symbols(), collapse_oracle(&path, BLANK).as_slice(), "{path:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, (0..=6).map(|n| 3usize.pow(n)).sum::<usize>());
}

fn ctc_loss_at(frames: usize, labels: usize, logits: &[f64], target: &LabelSequence) -> f64 {
    let post = LogProbMatrix::from_logits(frames, labels, logits.to_vec()).unwrap();
    ctc_loss_and_grad(&post, target, BLANK).unwrap().loss
}

#[test]
fn ctc_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for _ in 0..20 {
        let frames = rng.random_range(2..=10);
        let labels = rng.random_range(2..=5);
        let path: Vec<usize> = (0..frames).map(|_| rng.random_range(0..labels)).collect();
        let target = collapse(&path, BLANK);
        let logits = random_logits(&mut rng, frames, labels, 2.0);
        let post = LogProbMatrix::from_logits(frames, labels, logits.clone()).unwrap();
        let analytic = ctc_loss_and_grad(&post, &target, BLANK).unwrap().grad;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += h;
            let mut down = logits.clone();
            down[i] -= h;
            let fd = (ctc_loss_at(frames, labels, &up, &target) - ctc_loss_at(frames, labels, &down, &target)) / (2.0 * h);
            assert!(rel_err(analytic[i], fd, 1e-6) <= 1e-4, "logit {i}: {} vs {fd}", analytic[i]);
        }
    }
}

#[test]
fn frame_kd_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-3;
    for _ in 0..20 {
        let frames = rng.random_range(1..=8);
        let labels = rng.random_range(2..=6);
        let teacher = LogProbMatrix::from_logits(frames, labels, random_logits(&mut rng, frames, labels, 3.0)).unwrap();
        let logits = random_logits(&mut rng, frames, labels, 3.0);
        let loss_at = |l: &[f64]| frame_kd_loss(&teacher, &LogProbMatrix::from_logits(frames, labels, l.to_vec()).unwrap()).unwrap().loss;
        let analytic = frame_kd_loss(&teacher, &LogProbMatrix::from_logits(frames, labels, logits.clone()).unwrap())
            .unwrap()
            .grad;
        for i in 0..logits.len() {
            let fd = central_difference(&logits, i, h, |l| loss_at(l));
            assert!(rel_err(analytic[i], fd, 1e-4) <= 1e-6, "logit {i}: {} vs {fd}", analytic[i]);
        }
    }
}

fn model_gradcheck(config: ModelConfig, frames: usize, seed: u64, use_ctc: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(config.clone()).unwrap();
    // Larger weights than the default init so every term is exercised.
    for w in params.flat_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    let x = FeatureMatrix::new(
        frames,
        config.input_dim,
        (0..frames * config.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let frame_labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..config.num_labels)).collect();
    let target = collapse(&frame_labels, BLANK);
    let loss_of = |p: &ModelParams, g: &mut [f64]| {
        p.accumulate_gradient(&x, g, |post| {
            if use_ctc {
                Ok(ctc_loss_and_grad(post, &target, BLANK)?)
            } else {
                Ok(frame_cross_entropy(post, &frame_labels))
            }
        })
        .unwrap()
    };
    let mut analytic = vec![0.0; params.num_params()];
    loss_of(&params, &mut analytic);
    let h = 1e-5;
    let mut scratch = vec![0.0; params.num_params()];
    for i in 0..params.num_params() {
        let orig = params.flat()[i];
        params.flat_mut()[i] = orig + h;
        let up = loss_of(&params, &mut scratch);
        params.flat_mut()[i] = orig - h;
        let down = loss_of(&params, &mut scratch);
        params.flat_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        assert!(rel_err(analytic[i], fd, 1e-5) <= 1e-3, "param {i}: {} vs {fd}", analytic[i]);
    }
}

#[test]
fn model_gradient_matches_central_differences() {
    let uni = ModelConfig {
        input_dim: 3,
        hidden_units: 4,
        num_layers: 2,
        bidirectional: false,
        num_labels: 4,
        seed: 1,
    };
    model_gradcheck(uni.clone(), 6, 10, true);
    model_gradcheck(uni, 5, 11, false);
    let bi = ModelConfig {
        input_dim: 2,
        hidden_units: 3,
        num_layers: 2,
        bidirectional: true,
        num_labels: 3,
        seed: 2,
    };
    model_gradcheck(bi.clone(), 7, 12, true);
    model_gradcheck(bi, 4, 13, false);
}

proptest! {
    #[test]
    fn likelihood_never_exceeds_zero(seed in any::<u64>(), frames in 1usize..12, labels in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = LogProbMatrix::from_logits(frames, labels, random_logits(&mut rng, frames, labels, 5.0)).unwrap();
        let path: Vec<usize> = (0..frames).map(|_| rng.random_range(0..labels)).collect();
        let ll = ctc_log_likelihood(&post, &collapse(&path, BLANK), BLANK).unwrap();
        prop_assert!(ll.is_feasible());
        prop_assert!(ll.value() <= 1e-12);
    }

    #[test]
    fn ctc_gradient_rows_sum_to_zero(seed in any::<u64>(), frames in 1usize..15, labels in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = LogProbMatrix::from_logits(frames, labels, random_logits(&mut rng, frames, labels, 4.0)).unwrap();
        let path: Vec<usize> = (0..frames).map(|_| rng.random_range(0..labels)).collect();
        let lg = ctc_loss_and_grad(&post, &collapse(&path, BLANK), BLANK).unwrap();
        for row in lg.grad.chunks(labels) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn collapse_is_idempotent_on_blank_free_output(path in prop::collection::vec(0usize..4, 0..20)) {
        let once = collapse(&path, BLANK);
        prop_assert!(once.symbols().iter().all(|&l| l != BLANK));
        prop_assert!(once.len() <= path.len());
        let expected = collapse_oracle(&path, BLANK);
        prop_assert_eq!(once.symbols(), expected.as_slice());
    }
}
