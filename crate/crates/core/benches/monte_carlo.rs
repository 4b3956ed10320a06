use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sig_lqc::model::{CostSpec, LqModel};
use sig_lqc::simulation::{
    estimate_cost, expected_signature_mc, ConstantControl, DriverConfig, GeneratedPaths,
    PathGenerator, Scheme,
};
use sig_lqc::Workers;

const MODES: [(&str, Workers); 2] = [("sequential", Workers(1)), ("parallel", Workers(0))];

fn cost_estimate(c: &mut Criterion) {
    let model = LqModel::scalar(10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    let cost = CostSpec {
        b: vec![vec![vec![1.0]]],
        e: vec![vec![1.0]],
        ..Default::default()
    };
    let generator = PathGenerator::new(&DriverConfig::brownian(1, 1000, 1.0, 1)).unwrap();
    let paths = GeneratedPaths {
        generator: &generator,
        count: 1000,
    };
    let control = ConstantControl(vec![-5.0]);
    let mut group = c.benchmark_group("cost_estimate_1000_paths");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                estimate_cost(&model, &cost, &control, &paths, Scheme::ItoEuler, workers).unwrap()
            })
        });
    }
    group.finish();
}

fn fbm_expected_signature(c: &mut Criterion) {
    let generator = PathGenerator::new(&DriverConfig::fbm(0.25, 1, 1000, 1.0, 1)).unwrap();
    let mut group = c.benchmark_group("fbm_expected_signature_level6_256_paths");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| expected_signature_mc(&generator, 256, 6, workers).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cost_estimate, fbm_expected_signature);
criterion_main!(benches);
