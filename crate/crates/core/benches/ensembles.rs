use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use langevin_core::oracle::GaussianMixture;
use langevin_core::reverse::{generate, ReverseSpec};
use langevin_core::rng::RngStream;
use langevin_core::train::{dsm_loss, DsmBatch, LossSpec, MlpModel, WeightMode};
use langevin_core::types::{ModelType, PredictionKind};
use langevin_core::OracleField;

fn mixture() -> GaussianMixture {
    GaussianMixture::symmetric_1d(&[-2.0, 2.0], 0.1).unwrap()
}

fn reverse_ensemble() {
    let spec = ReverseSpec::new(ModelType::VpSde, OracleField::new(mixture(), PredictionKind::Score));
    black_box(generate(&spec, 4096, 50, &RngStream::new(1, 0)).unwrap());
}

fn loss_gradient(model: &MlpModel, batch: &DsmBatch, spec: &LossSpec) {
    black_box(dsm_loss(model, batch, spec).unwrap());
}

fn workloads(c: &mut Criterion, label: &str, run: &dyn Fn(&mut (dyn FnMut() + Send))) {
    let data = mixture();
    let spec = LossSpec::new(ModelType::VpSde, WeightMode::NoiseVariance);
    let model = MlpModel::new(PredictionKind::Score, 1, &[64, 64], &mut RngStream::new(2, 0)).unwrap();
    let batch = DsmBatch::sample(&data, &spec, 1024, &mut RngStream::new(3, 0));
    let mut group = c.benchmark_group("ensembles");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("reverse-4096x50", label), |b| {
        b.iter(|| run(&mut reverse_ensemble))
    });
    group.bench_function(BenchmarkId::new("dsm-loss-1024", label), |b| {
        b.iter(|| run(&mut || loss_gradient(&model, &batch, &spec)))
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    workloads(c, "rayon-1-thread", &|f| single.install(f));
    let label = format!("rayon-default-{}", rayon::current_num_threads());
    workloads(c, &label, &|f| f());
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    workloads(c, "sequential", &|f| f());
}

criterion_group!(benches, bench);
criterion_main!(benches);
