use aigi_bench::{tiny_bundle, toy_batch, unit_vectors};
use aigi_core::dire::{compute_dire, ToyDiffusion};
use aigi_core::encoder::{initial_logit_scale, similarity_logits};
use aigi_core::finetune::{symmetric_loss_with_grad, Targets, TrainState};
use aigi_core::TrainConfig;
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;

fn similarity_and_loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity_loss");
    for n in [16, 64, 256] {
        let images = unit_vectors(n, 64, 1);
        let texts = unit_vectors(n, 64, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let logits = similarity_logits(&images, &texts, initial_logit_scale()).unwrap();
                black_box(symmetric_loss_with_grad(&logits, &Targets::Diagonal).unwrap())
            })
        });
    }
    group.finish();
}

fn embed_images(c: &mut Criterion) {
    let (bundle, _) = tiny_bundle(32, 0);
    let (images, _) = toy_batch(64, 32, 3);
    c.bench_function("embed_images/64x32px", |b| {
        b.iter(|| black_box(bundle.embed_images(&images).unwrap()))
    });
}

fn train_step(c: &mut Criterion) {
    let (bundle, registry) = tiny_bundle(32, 0);
    let (images, classes) = toy_batch(16, 32, 4);
    let ids: Vec<usize> = (0..images.len()).collect();
    let state = TrainState::new(bundle, TrainConfig::default());
    c.bench_function("train_step/batch16", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| black_box(s.train_step(&images, &classes, &ids, &registry).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn dire(c: &mut Criterion) {
    let mut group = c.benchmark_group("compute_dire");
    for steps in [10, 50] {
        let oracle = ToyDiffusion::new(32, steps, 0).unwrap();
        let image = oracle.samples(1, 5).remove(0);
        group.bench_with_input(BenchmarkId::new("steps", steps), &steps, |b, _| {
            b.iter(|| black_box(compute_dire(&image, &oracle).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, similarity_and_loss, embed_images, train_step, dire);
criterion_main!(benches);
