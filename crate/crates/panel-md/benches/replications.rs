//! Replication throughput of the simulation engine: the data-parallel driver
//! against the sequential one on the same config. With the `parallel` feature
//! disabled both paths are sequential and should time identically.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use panel_md::{run_simulation, run_simulation_sequential, SimulationConfig};

fn bench_replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for reps in [100usize, 400] {
        let config = SimulationConfig {
            reps,
            seed: 42,
            ..SimulationConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("parallel", reps), &config, |b, cfg| {
            b.iter(|| run_simulation(cfg).unwrap());
        });
        group.bench_with_input(BenchmarkId::new("sequential", reps), &config, |b, cfg| {
            b.iter(|| run_simulation_sequential(cfg).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replications);
criterion_main!(benches);
