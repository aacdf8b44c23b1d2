use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use crossmap::selflearn::{csls_knn_means, ZeroingStream};
use crossmap::vecmath::{normalize, similarity_block, sqrt_outer_gram};
use crossmap::{
    generate_synthetic, induce_dictionary, procrustes, symmetric_reweight, DenseMatrix, Dictionary,
    SelfLearnConfig, SynthSpec,
};

fn spaces(n: usize, dim: usize) -> (DenseMatrix, DenseMatrix) {
    let inst = generate_synthetic(&SynthSpec {
        n_words: n,
        dim,
        noise_sigma: 0.05,
        seed: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    (
        normalize(inst.source.vectors()).unwrap(),
        normalize(inst.target.vectors()).unwrap(),
    )
}

fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity");
    for n in [1000, 4000] {
        let (x, z) = spaces(n, 100);
        group.throughput(Throughput::Elements((n * n) as u64));
        group.bench_with_input(BenchmarkId::new("block", n), &n, |b, &n| {
            b.iter(|| similarity_block(black_box(&x), black_box(&z), 0..n).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("csls_knn_means", n), &n, |b, _| {
            b.iter(|| csls_knn_means(black_box(&x), black_box(&z), 10).unwrap())
        });
    }
    group.finish();
}

fn induction(c: &mut Criterion) {
    let mut group = c.benchmark_group("induction");
    group.sample_size(20);
    let (x, z) = spaces(2000, 50);
    let params = SelfLearnConfig::default().induction();
    for keep_prob in [1.0, 0.1] {
        group.bench_with_input(BenchmarkId::new("csls_bidirectional", keep_prob), &keep_prob, |b, &p| {
            let stream = ZeroingStream::new(3, 0);
            b.iter(|| induce_dictionary(black_box(&x), black_box(&z), &params, p, &stream).unwrap())
        });
    }
    group.finish();
}

fn closed_forms(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_forms");
    let (x, z) = spaces(5000, 300);
    let d = Dictionary::identity(5000).unwrap();
    group.bench_function("procrustes_5000x300", |b| {
        b.iter(|| procrustes(black_box(&x), black_box(&z), &d).unwrap())
    });
    group.bench_function("reweight_5000x300", |b| {
        b.iter(|| symmetric_reweight(black_box(&x), black_box(&z), &d).unwrap())
    });
    group.sample_size(10);
    let (x, _) = spaces(2000, 300);
    group.bench_function("sqrt_outer_gram_2000x300", |b| {
        b.iter(|| sqrt_outer_gram(black_box(&x)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, similarity, induction, closed_forms);
criterion_main!(benches);
