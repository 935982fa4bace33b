//! Benchmarks for the hot paths: the forward pass, channel-level relevance
//! attribution, end-to-end single-instance explanation, training, and the
//! statistical tests.

use criterion::{criterion_group, criterion_main, Criterion};
use cxai_core::{
    anova_oneway, concept_scores, explain, synthesize_dataset, t_paired, train, Architecture,
    ConceptNames, Dataset, Network, RelevanceRange, Split, SplitMix64, TrainConfig,
};
use std::hint::black_box;

fn toy_setup() -> (Network, Dataset) {
    let arch = Architecture::default_toy();
    let net = arch.build(42).expect("valid architecture");
    let data = synthesize_dataset(10, 32, 7, Split::Test).expect("valid spec");
    (net, data)
}

fn bench_forward(c: &mut Criterion) {
    let (net, data) = toy_setup();
    let image = &data.instances()[0].image;
    c.bench_function("forward_toy_1x32x32", |b| {
        b.iter(|| net.forward(black_box(image)).unwrap())
    });
}

fn bench_concept_scores(c: &mut Criterion) {
    let (net, data) = toy_setup();
    let inst = &data.instances()[0];
    c.bench_function("concept_scores_toy_1x32x32", |b| {
        b.iter(|| concept_scores(&net, black_box(&inst.image), &inst.id, inst.label, 1e-6).unwrap())
    });
}

fn bench_explain(c: &mut Criterion) {
    // a briefly trained model so every test instance classifies correctly
    // enough to keep the contrast pool non-trivial
    let arch = Architecture::default_toy();
    let train_data = synthesize_dataset(50, 32, 42, Split::Train).expect("valid spec");
    let test_data = synthesize_dataset(10, 32, 42, Split::Test).expect("valid spec");
    let net = train(
        &arch.build(42).expect("valid architecture"),
        &train_data,
        &TrainConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 42,
        },
    )
    .expect("training succeeds");
    let names = ConceptNames::unnamed(net.concept_channels());
    let class_names = vec!["teapot".to_string(), "vase".to_string()];
    let target = test_data
        .instances()
        .iter()
        .find(|inst| {
            let trace = net.forward(&inst.image).unwrap();
            trace.predicted_class() == inst.label
        })
        .expect("at least one correct instance")
        .id
        .clone();
    c.bench_function("explain_one_toy_10_images", |b| {
        b.iter(|| {
            explain(
                &net,
                black_box(&test_data),
                &target,
                RelevanceRange::VeryStrong,
                &names,
                &class_names,
                1e-6,
            )
            .unwrap()
        })
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let arch = Architecture::default_toy();
    let init = arch.build(42).expect("valid architecture");
    let data = synthesize_dataset(25, 32, 42, Split::Train).expect("valid spec");
    let config = TrainConfig {
        epochs: 1,
        batch_size: 16,
        learning_rate: 0.01,
        seed: 42,
    };
    c.bench_function("train_epoch_50_images_1x32x32", |b| {
        b.iter(|| train(black_box(&init), &data, &config).unwrap())
    });
}

fn bench_stats(c: &mut Criterion) {
    let mut rng = SplitMix64::new(9);
    let groups: Vec<Vec<f64>> = (0..4)
        .map(|g| {
            (0..100)
                .map(|_| rng.next_normal() + 0.2 * g as f64)
                .collect()
        })
        .collect();
    c.bench_function("anova_oneway_4x100", |b| {
        b.iter(|| anova_oneway(black_box(&groups)).unwrap())
    });

    let first: Vec<f64> = (0..100).map(|_| rng.next_normal()).collect();
    let second: Vec<f64> = first
        .iter()
        .map(|v| v + 0.3 + 0.1 * rng.next_normal())
        .collect();
    c.bench_function("t_paired_100", |b| {
        b.iter(|| t_paired(black_box(&first), black_box(&second)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_forward,
    bench_concept_scores,
    bench_explain,
    bench_train_epoch,
    bench_stats
);
criterion_main!(benches);
