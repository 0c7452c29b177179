use criterion::{black_box, criterion_group, criterion_main, Criterion};
use electosim_core::analysis::{fit_logistic, logistic_fixture, FitOptions};
use electosim_core::metrics::{bias_metric, wae, wmse, Scored};
use electosim_core::sampling::fisher_yates_prefix;
use electosim_core::synthpop::{sample_copula, CopulaSpec};

fn copula(c: &mut Criterion) {
    let rows = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.8], vec![0.5, 0.8, 1.0]];
    let spec = CopulaSpec::new(&rows).unwrap();
    c.bench_function("sample_copula 10k x 3", |b| b.iter(|| sample_copula(&spec, black_box(10_000), 7).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let xs: Vec<Scored> = (0..51)
        .map(|i| Scored::new(0.3 + 0.005 * i as f64, 0.5 - 0.003 * i as f64, 3.0 + i as f64))
        .collect();
    c.bench_function("wae+wmse+bm 51 states", |b| {
        b.iter(|| (wae(black_box(&xs)), wmse(&xs), bias_metric(&xs)))
    });
}

fn regression(c: &mut Criterion) {
    let points = logistic_fixture(5000, 1.5, -6.0, 20240501);
    c.bench_function("irls 5000 points", |b| b.iter(|| fit_logistic(black_box(&points), FitOptions::default()).unwrap()));
}

fn sampling(c: &mut Criterion) {
    c.bench_function("fisher_yates 4269 of 100k", |b| b.iter(|| fisher_yates_prefix(black_box(100_000), 4269, 3)));
}

criterion_group!(benches, copula, metrics, regression, sampling);
criterion_main!(benches);
