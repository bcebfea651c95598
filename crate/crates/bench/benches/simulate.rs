use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use predcache_core::analysis::build_eviction_graph;
use predcache_core::harness::prepare_trace;
use predcache_core::workload::WorkloadKind;
use predcache_core::{
    compute_losses, generate_predictions, run, NextOccurrence, NoiseKind, NoiseModel, PolicySpec,
    PredictionTrace, RequestTrace,
};

const LEN: usize = 20_000;
const K: usize = 64;

fn fixture() -> (RequestTrace, NextOccurrence, PredictionTrace) {
    let kind = WorkloadKind::Zipf {
        pages: 2_000,
        exponent: 0.9,
    };
    let (trace, nu, _) = prepare_trace(&kind, LEN, 1).expect("workload");
    let omega = generate_predictions(
        &nu,
        &NoiseModel::new(NoiseKind::AdditiveUniform { width: 50 }, 2),
    )
    .expect("noise");
    (trace, nu, omega)
}

fn policies(c: &mut Criterion) {
    let (trace, nu, omega) = fixture();
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(LEN as u64));
    for spec in [
        "belady",
        "lru",
        "lfu",
        "marker",
        "blind-oracle",
        "alternating-oracle",
        "combine-det(blind-oracle,lru)",
        "combine-stoch(blind-oracle,marker,0.1)",
    ] {
        let policy: PolicySpec = spec.parse().expect("policy");
        g.bench_with_input(BenchmarkId::from_parameter(spec), &policy, |b, p| {
            b.iter(|| run(&trace, &nu, Some(&omega), black_box(p), K, 3).expect("run"))
        });
    }
    g.finish();
}

fn certificate(c: &mut Criterion) {
    let (trace, nu, omega) = fixture();
    let result = run(&trace, &nu, Some(&omega), &PolicySpec::BlindOracle, K, 3).expect("run");
    let mut g = c.benchmark_group("analysis");
    g.throughput(Throughput::Elements(LEN as u64));
    g.bench_function("eviction_graph", |b| {
        b.iter(|| build_eviction_graph(&trace, &nu, black_box(&result), K).expect("graph"))
    });
    g.bench_function("losses", |b| {
        b.iter(|| compute_losses(&nu, black_box(&omega)))
    });
    g.finish();
}

criterion_group!(benches, policies, certificate);
criterion_main!(benches);
