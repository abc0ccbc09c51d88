//! Data-parallel kernels against their sequential fallback.
//!
//! Every benchmark id carries the build's execution mode. Run
//!
//! ```text
//! cargo bench -p dictlearn-core --bench parallel
//! cargo bench -p dictlearn-core --bench parallel --no-default-features
//! ```
//!
//! and criterion keeps `encode_batch/parallel` next to
//! `encode_batch/sequential` in its report.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dictlearn::baselines::CovarianceAccumulator;
use dictlearn::sae::{TrainConfig, Trainer};
use dictlearn::{par, Dictionary};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const D_IN: usize = 128;
const ROWS: usize = 8192;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn mode() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn encode_batch(c: &mut Criterion) {
    let x = gaussian(ROWS, D_IN, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dict = Dictionary::random(D_IN, 4 * D_IN, true, &mut rng).unwrap();
    let mut group = c.benchmark_group("encode_batch");
    group.throughput(Throughput::Elements(ROWS as u64));
    group.bench_function(BenchmarkId::from_parameter(mode()), |b| {
        b.iter(|| black_box(dict.encode_batch(x.view()).unwrap()))
    });
    group.finish();
}

fn trainer_step(c: &mut Criterion) {
    let x = gaussian(1024, D_IN, 3);
    let config = TrainConfig {
        ratio: 4.0,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("trainer_step");
    group.throughput(Throughput::Elements(1024));
    let mut trainer = Trainer::new(D_IN, &config).unwrap();
    group.bench_function(BenchmarkId::from_parameter(mode()), |b| {
        b.iter(|| black_box(trainer.step(x.view()).unwrap()))
    });
    group.finish();
}

fn covariance(c: &mut Criterion) {
    let x = gaussian(ROWS, D_IN, 4);
    let mut group = c.benchmark_group("pca_covariance");
    group.throughput(Throughput::Elements(ROWS as u64));
    group.bench_function(BenchmarkId::from_parameter(mode()), |b| {
        b.iter(|| {
            let mut acc = CovarianceAccumulator::new(D_IN);
            acc.push_batch(x.view()).unwrap();
            black_box(acc.covariance())
        })
    });
    group.finish();
}

criterion_group!(benches, encode_batch, trainer_step, covariance);
criterion_main!(benches);
