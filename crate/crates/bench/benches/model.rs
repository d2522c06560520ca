use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mln_bench::moons_model;
use mln_core::model::outputs_for;
use mln_core::trainer::loss_and_grad;
use mln_core::LossConfig;
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_1024");
    for k in [1, 3, 20] {
        let (params, data) = moons_model(k, &[64, 64], 1);
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| outputs_for(black_box(&params), black_box(&data.features)).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grad_batch128");
    let cfg = LossConfig {
        lambda1: 1.0,
        lambda2: 1.0,
    };
    let batch: Vec<usize> = (0..128).collect();
    for k in [1, 3, 20] {
        let (params, data) = moons_model(k, &[64, 64], 2);
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| loss_and_grad(black_box(&params), &data, &batch, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, gradient);
criterion_main!(benches);
