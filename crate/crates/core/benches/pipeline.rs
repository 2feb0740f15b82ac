use std::hint::black_box;

use acoustic_core::par::Exec;
use acoustic_core::pipeline::detect;
use acoustic_core::synth::{generate_synthetic_with, SynthConfig};
use acoustic_core::DetectConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn config() -> SynthConfig {
    SynthConfig {
        node_count: 7,
        days: 2,
        ..SynthConfig::default()
    }
}

fn bench_detect(c: &mut Criterion) {
    let ds = generate_synthetic_with(&config(), Exec::Parallel).expect("synthetic data");
    let cfg = DetectConfig::default();
    let mut group = c.benchmark_group("detect_14_node_days");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| detect(black_box(&ds.windows), &cfg, exec).expect("detect"))
        });
    }
    group.finish();
}

fn bench_generate(c: &mut Criterion) {
    let cfg = config();
    let mut group = c.benchmark_group("generate_14_node_days");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| generate_synthetic_with(black_box(&cfg), exec).expect("generate"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_detect, bench_generate);
criterion_main!(benches);
