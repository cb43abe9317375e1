//! Hot-path benchmarks: the Gibbs sweep, the MAP reliability update, the
//! Boolean matrix product, and ROC-AUC scoring.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use maxmachine::{
    boolean_or_product, roc_auc, sweep, update_reliabilities_map, BinaryMatrix, FactorLayer,
    HoldoutMask, PriorConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> BinaryMatrix {
    let mut m = BinaryMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if rng.random::<f64>() < density {
                m.set(i, j, true);
            }
        }
    }
    m
}

fn bench_sweep(c: &mut Criterion) {
    let (n, d, l) = (200, 100, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(n, d, 0.15, &mut rng);
    let mask = HoldoutMask::empty(n, d);
    let mut layer = FactorLayer::new(n, d, l, PriorConfig::default()).unwrap();
    layer.randomize_unclamped(&mut rng);
    c.bench_function("gibbs_sweep_200x100x16", |b| {
        b.iter(|| sweep(black_box(&mut layer), &x, &mask, &mut rng).unwrap())
    });
}

fn bench_reliability_update(c: &mut Criterion) {
    let (n, d, l) = (200, 100, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(n, d, 0.15, &mut rng);
    let mask = HoldoutMask::empty(n, d);
    let mut layer = FactorLayer::new(n, d, l, PriorConfig::default()).unwrap();
    layer.randomize_unclamped(&mut rng);
    c.bench_function("map_reliability_update_200x100x16", |b| {
        b.iter(|| update_reliabilities_map(black_box(&mut layer), &x, &mask).unwrap())
    });
}

fn bench_boolean_product(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_matrix(500, 32, 0.2, &mut rng);
    let u = random_matrix(32, 200, 0.1, &mut rng);
    c.bench_function("boolean_or_product_500x32x200", |b| {
        b.iter(|| boolean_or_product(black_box(&z), black_box(&u)).unwrap())
    });
}

fn bench_roc_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<bool> = scores
        .iter()
        .map(|&s| rng.random::<f64>() < 0.3 + 0.4 * s)
        .collect();
    c.bench_function("roc_auc_100k", |b| {
        b.iter(|| roc_auc(black_box(&scores), black_box(&labels)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_sweep,
    bench_reliability_update,
    bench_boolean_product,
    bench_roc_auc
);
criterion_main!(benches);
