use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use magr_bench::{layer_fixture, vector_fixture};
use magr_core::{
    cd_refine, magr_preprocess, optq_quantize, project_l1_vector, prox_linf_columns, rtn_quantize,
    DenseMatrix, MagRConfig, Method, QuantConfig,
};

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_l1");
    for len in [64usize, 1024, 16384] {
        let v = vector_fixture(len, 1);
        group.bench_with_input(BenchmarkId::from_parameter(len), &v, |b, v| {
            b.iter(|| project_l1_vector(black_box(v), 1.0).unwrap())
        });
    }
    group.finish();
}

fn prox(c: &mut Criterion) {
    let v = DenseMatrix::new(256, 256, vector_fixture(256 * 256, 2)).unwrap();
    c.bench_function("prox_linf_columns/256x256", |b| {
        b.iter(|| prox_linf_columns(black_box(&v), 0.5).unwrap())
    });
}

fn magr(c: &mut Criterion) {
    let (w, h) = layer_fixture(128, 64, 3);
    let cfg = MagRConfig::per_channel(1e-3).with_max_iter(50);
    c.bench_function("magr/128x64/k50", |b| {
        b.iter(|| magr_preprocess(black_box(&w), &h, &cfg).unwrap())
    });
}

fn quantizers(c: &mut Criterion) {
    let (w, h) = layer_fixture(128, 64, 4);
    let cfg = QuantConfig::new(3, 0, Method::Optq);
    let mut group = c.benchmark_group("quantize/128x64/b3");
    group.bench_function("rtn", |b| b.iter(|| rtn_quantize(black_box(&w), &cfg).unwrap()));
    group.bench_function("optq", |b| b.iter(|| optq_quantize(black_box(&w), &h, &cfg).unwrap()));
    let start = optq_quantize(&w, &h, &cfg).unwrap();
    group.bench_function("cd/5", |b| b.iter(|| cd_refine(black_box(&start), &w, &h, 5).unwrap()));
    group.finish();
}

criterion_group!(benches, projection, prox, magr, quantizers);
criterion_main!(benches);
