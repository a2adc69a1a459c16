use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wavetail::evolution::{evolve, CauchyData, EvolveParams};
use wavetail::metric::{normalize, MetricPreset, MetricSpec};
use wavetail::operator::{build_operator, radial_reduce, RadialOperator};
use wavetail::par::ExecMode;
use wavetail::synthesis::{transform, SynthesisPlan};

fn family_k2() -> RadialOperator {
    let spec = MetricSpec::from_preset(&MetricPreset::Family { kappa: 2, eps: MetricPreset::default_eps(2) }).unwrap();
    radial_reduce(&build_operator(&normalize(&spec).unwrap()).unwrap(), 0)
}

const MODES: [(&str, ExecMode); 2] = [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)];

fn bench_evolve(c: &mut Criterion) {
    let rop = family_k2();
    let data = CauchyData::pulse(0, 6.0, 10.0, true);
    let mut group = c.benchmark_group("evolve_t200");
    group.sample_size(10);
    for (name, mode) in MODES {
        let p = EvolveParams { mode, ..Default::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(evolve(&rop, &data, 200.0, &[10.0], &p).unwrap()))
        });
    }
    group.finish();
}

fn bench_transform(c: &mut Criterion) {
    let rop = family_k2();
    let data = CauchyData::pulse(0, 6.0, 10.0, true);
    let mut group = c.benchmark_group("transform_t50");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut plan = SynthesisPlan::causal(50.0, 10.0, 10.0, 0.05).unwrap();
        plan.mode = mode;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(transform(&rop, &data, &[10.0], &plan).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evolve, bench_transform);
criterion_main!(benches);
