use std::hint::black_box;

use cocodesk_core::eval::{identify, random_features, verify_scores};
use cocodesk_core::features::LabeledFeatures;
use cocodesk_core::fusion::{fit_logistic, merge_scores, Calibration, RegionScores, RegionTable};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verification(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let same: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    let scores: Vec<f64> = same
        .iter()
        .map(|&s| rng.random_range(-1.0..1.0) * 0.5 + if s { 0.3 } else { -0.3 })
        .collect();
    c.bench_function("verify_10k_pairs", |b| {
        b.iter(|| black_box(verify_scores(black_box(&scores), &same).unwrap()))
    });
}

fn identification(c: &mut Criterion) {
    let gallery = LabeledFeatures::new(random_features(20, 32, 1), (0..20).collect()).unwrap();
    let probes = LabeledFeatures::new(random_features(20, 32, 2), (0..20).collect()).unwrap();
    let pool = random_features(1000, 32, 3);
    c.bench_function("identify_20x1000_5trials", |b| {
        b.iter(|| black_box(identify(&probes, &gallery, &pool, &[10, 100, 1000], 5, 4).unwrap()))
    });
}

fn fusion(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let same: Vec<bool> = scores
        .iter()
        .map(|&s| rng.random::<f64>() < 1.0 / (1.0 + (2.0 - 4.0 * s).exp()))
        .collect();
    c.bench_function("fit_logistic_10k", |b| {
        b.iter(|| black_box(fit_logistic(&scores, &same, 100, 1e-9).unwrap()))
    });

    let regions = (0..5)
        .map(|r| RegionTable {
            name: format!("r{r}"),
            scores: (0..20)
                .map(|_| (0..50).map(|_| Some(rng.random_range(-1.0..1.0))).collect())
                .collect(),
        })
        .collect();
    let rs = RegionScores {
        reference_labels: (1..=50).collect(),
        probe_labels: None,
        regions,
    };
    let cals = [Calibration::IDENTITY; 5];
    let weights = [0.2; 5];
    c.bench_function("merge_5x20x50", |b| {
        b.iter(|| black_box(merge_scores(&rs, &weights, &cals).unwrap()))
    });
}

criterion_group!(benches, verification, identification, fusion);
criterion_main!(benches);
