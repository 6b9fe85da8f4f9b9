use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctcssl::{ctc_loss_and_grad, edit_distance, prefix_beam_decode, ModelConfig, ModelParams};
use ctcssl_bench::{random_features, random_posteriors, random_target};
use std::hint::black_box;

fn ctc(c: &mut Criterion) {
    let mut g = c.benchmark_group("ctc_loss_and_grad");
    for frames in [40, 160] {
        let post = random_posteriors(frames, 11, 1);
        let target = random_target(frames / 5, 11, 2);
        g.bench_with_input(BenchmarkId::from_parameter(frames), &frames, |b, _| {
            b.iter(|| ctc_loss_and_grad(black_box(&post), black_box(&target), 0).unwrap())
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let x = random_features(40, 8, 3);
    let student = ModelParams::init(ModelConfig::student(8, 11, 0)).unwrap();
    let teacher = ModelParams::init(ModelConfig::teacher(8, 11, 0)).unwrap();
    c.bench_function("forward/student", |b| b.iter(|| student.forward(black_box(&x)).unwrap()));
    c.bench_function("forward/teacher", |b| b.iter(|| teacher.forward(black_box(&x)).unwrap()));
    c.bench_function("backward/student", |b| {
        let target = random_target(6, 11, 4);
        let mut grad = vec![0.0; student.num_params()];
        b.iter(|| {
            student
                .accumulate_gradient(&x, &mut grad, |post| Ok(ctc_loss_and_grad(post, &target, 0)?))
                .unwrap()
        })
    });
}

fn beam(c: &mut Criterion) {
    let post = random_posteriors(40, 11, 5);
    let mut g = c.benchmark_group("prefix_beam_decode");
    for width in [1, 8, 32] {
        g.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, &w| {
            b.iter(|| prefix_beam_decode(black_box(&post), 0, w))
        });
    }
    g.finish();
}

fn edits(c: &mut Criterion) {
    let r = random_target(50, 11, 6);
    let h = random_target(45, 11, 7);
    c.bench_function("edit_distance/50x45", |b| b.iter(|| edit_distance(black_box(&r), black_box(&h))));
}

criterion_group!(benches, ctc, forward, beam, edits);
criterion_main!(benches);
