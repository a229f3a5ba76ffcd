use std::hint::black_box;

use conveyor_count::batch::count_many;
use conveyor_count::counter::pair_assignments;
use conveyor_count::{generate, perturb, run_counter, CounterConfig, ExecMode, FrameDetections, NoiseProfile, Scenario};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn dense_stream() -> Vec<FrameDetections> {
    let scenario = Scenario {
        num_objects: 1450,
        entry_spacing: (0, 3),
        lanes: (0..19).map(|i| 40.0 + 40.0 * i as f64).collect(),
        min_separation: 30.0,
        box_size: (28.0, 36.0),
        seed: 3,
        ..Scenario::default()
    };
    let mut stream = generate(&scenario).unwrap().stream;
    stream.truncate(2227);
    stream
}

fn noisy_batch(n: u64) -> Vec<Vec<FrameDetections>> {
    let noise = NoiseProfile {
        dropout_prob: 0.03,
        max_consecutive_dropout: 5,
        jitter_sigma: 1.5,
        flip_open_visible_prob: 0.3,
        ..NoiseProfile::none()
    };
    (0..n)
        .map(|seed| {
            let sim = generate(&Scenario { num_objects: 200, seed, ..Scenario::default() }).unwrap();
            perturb(&sim.stream, &sim.truth, &sim.geometry, &noise, seed).unwrap()
        })
        .collect()
}

fn single_stream(c: &mut Criterion) {
    let stream = dense_stream();
    let cfg = CounterConfig::default();
    let mut group = c.benchmark_group("dense_stream");
    group.throughput(Throughput::Elements(stream.len() as u64));
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("pair_assignments", name), &mode, |b, &mode| {
            b.iter(|| pair_assignments(black_box(&stream), cfg.assign_dist, mode))
        });
        group.bench_with_input(BenchmarkId::new("run_counter", name), &mode, |b, &mode| {
            b.iter(|| run_counter(black_box(&stream), &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let streams = noisy_batch(32);
    let cfg = CounterConfig::default();
    let mut group = c.benchmark_group("batch");
    group.throughput(Throughput::Elements(streams.iter().map(|s| s.len() as u64).sum()));
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("count_many", name), &mode, |b, &mode| {
            b.iter(|| count_many(black_box(&streams), &cfg, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, single_stream, batch);
criterion_main!(benches);
