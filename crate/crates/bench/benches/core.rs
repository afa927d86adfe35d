use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deepkriging::covariance::gram;
use deepkriging::kriging::UniversalKriging;
use deepkriging::model::{BasisConfig, ModelSpec};
use deepkriging::nngp::{induced_cov, Activation, NngpConfig};
use deepkriging::{BasisSystem, DeepKrigingModel, Kernel, NetworkOptions};
use deepkriging_bench::{exponential, gp_1d, surface_2d};
use std::hint::black_box;

fn embedding(c: &mut Criterion) {
    let mut g = c.benchmark_group("embedding");
    let d1 = gp_1d(1000);
    let b1 = BasisSystem::for_locations(d1.locations(), Kernel::Wendland, Some(4)).unwrap();
    g.bench_function("1d_n1000_k139", |b| b.iter(|| b1.embed(black_box(d1.locations())).unwrap()));
    let d2 = surface_2d(30);
    let b2 = BasisSystem::for_locations(d2.locations(), Kernel::Wendland, Some(3)).unwrap();
    g.bench_function("2d_n900_k1830", |b| b.iter(|| b2.embed(black_box(d2.locations())).unwrap()));
    g.finish();
}

fn gram_factor(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram_factor");
    g.sample_size(10);
    for n in [200, 400, 800] {
        let d = gp_1d(n);
        let model = exponential();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| gram(black_box(d.locations()), &model).unwrap()));
    }
    g.finish();
}

fn kriging(c: &mut Criterion) {
    let d = gp_1d(800);
    let test = gp_1d(200);
    let model = exponential();
    let mut g = c.benchmark_group("kriging");
    g.sample_size(10);
    g.bench_function("fit_predict_n800", |b| {
        b.iter(|| UniversalKriging::fit(&d, &model).unwrap().predict(test.locations(), test.covariates()).unwrap())
    });
    g.finish();
}

fn training(c: &mut Criterion) {
    let d = gp_1d(1000);
    let network = NetworkOptions { epochs: 5, ..NetworkOptions::gp_1d() };
    let spec = ModelSpec::regression(network, BasisConfig::with_levels(4));
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("deepkriging_1d_5_epochs", |b| b.iter(|| DeepKrigingModel::fit_regression(&spec, black_box(&d)).unwrap()));
    g.finish();
}

fn nngp(c: &mut Criterion) {
    let d = gp_1d(50);
    let phi = BasisSystem::for_locations(d.locations(), Kernel::Wendland, Some(4)).unwrap().evaluate(d.locations()).unwrap();
    let cfg = NngpConfig::new(0.1, 1.0, 5, Activation::Relu).unwrap();
    c.bench_function("nngp_gram_n50_depth5", |b| b.iter(|| induced_cov(black_box(&phi), &cfg).unwrap()));
}

criterion_group!(benches, embedding, gram_factor, kriging, training, nngp);
criterion_main!(benches);
