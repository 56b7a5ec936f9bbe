//! Sequential against parallel execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sctreid::ccflm::{kmeans, KMeansConfig};
use sctreid::cscm::FrtState;
use sctreid::evaluation::{evaluate, pairwise_euclidean, DistanceMatrix};
use sctreid::parallel::Exec;

fn normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn executors() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn distances(c: &mut Criterion) {
    let q = normal(256, 64, 1);
    let g = normal(1024, 64, 2);
    let mut group = c.benchmark_group("pairwise_euclidean");
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pairwise_euclidean(black_box(q.view()), black_box(g.view()), exec).unwrap())
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let points = normal(1500, 32, 3);
    let cfg = KMeansConfig::new(40, 9);
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans(black_box(points.view()), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn masks(c: &mut Criterion) {
    let features = normal(2000, 64, 4);
    let w_id = normal(500, 64, 5);
    let w_cam = normal(12, 64, 6);
    let ids: Vec<String> = (0..features.nrows()).map(|i| format!("s{i}")).collect();
    let cams: Vec<usize> = (0..features.nrows()).map(|i| i % 12).collect();
    let mut group = c.benchmark_group("frt_build");
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| FrtState::build(features.view(), &ids, &cams, w_id.view(), w_cam.view(), 0.5, exec).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let (nq, ng) = (400, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dm = DistanceMatrix {
        values: normal(nq, ng, 8).mapv(f64::abs),
        query_identities: (0..nq).map(|_| rng.random_range(0..100)).collect(),
        query_cameras: (0..nq).map(|_| rng.random_range(0..6)).collect(),
        gallery_identities: (0..ng).map(|_| rng.random_range(0..100)).collect(),
        gallery_cameras: (0..ng).map(|_| rng.random_range(0..6)).collect(),
    };
    let mut group = c.benchmark_group("evaluate");
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(black_box(&dm), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, distances, clustering, masks, metrics);
criterion_main!(benches);
