use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ticnn_bench::{input, kernel};
use ticnn_core::scan::{conv2d, naive_inner_product, ti_inner_product};
use ticnn_core::SymmetryGroup;

fn inner_products(c: &mut Criterion) {
    let mut g = c.benchmark_group("inner_product");
    for k in [3, 5, 9] {
        let region = input(k, 1);
        let ti = kernel(k, Some(SymmetryGroup::Dih4), 2);
        let dense = ti.weights().clone();
        g.bench_with_input(BenchmarkId::new("grouped_dih4", k), &k, |b, _| {
            b.iter(|| ti_inner_product(black_box(&region), black_box(&ti)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("naive", k), &k, |b, _| {
            b.iter(|| naive_inner_product(black_box(&region), black_box(&dense)).unwrap())
        });
    }
    g.finish();
}

fn convolution(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    let x = input(64, 3);
    for k in [3, 7] {
        let ti = kernel(k, Some(SymmetryGroup::Dih4), 4);
        let free = kernel(k, None, 4);
        g.bench_with_input(BenchmarkId::new("dih4", k), &k, |b, _| b.iter(|| conv2d(black_box(&x), &ti, 1).unwrap()));
        g.bench_with_input(BenchmarkId::new("unconstrained", k), &k, |b, _| b.iter(|| conv2d(black_box(&x), &free, 1).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, inner_products, convolution);
criterion_main!(benches);
