use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ocplab::benchmarks;
use ocplab::direct::{self, SolveOptions};
use ocplab::sweep::{self, GridSpec, SweepOptions};
use ocplab::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn multistart(c: &mut Criterion) {
    let spec = benchmarks::by_name("martinet").unwrap().spec().with_intervals(32);
    let mut group = c.benchmark_group("multistart_solve");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, execution) in MODES {
        let opts = SolveOptions {
            multistart_count: 8,
            execution,
            ..SolveOptions::default()
        };
        group.bench_with_input(BenchmarkId::new("martinet", name), &opts, |b, opts| {
            b.iter(|| direct::solve_fixed_endpoint(&spec, black_box(&[0.3, 0.5, 0.05]), opts).unwrap())
        });
    }
    group.finish();
}

fn value_sweep(c: &mut Criterion) {
    let spec = benchmarks::by_name("oscillator-potential").unwrap().spec().with_intervals(32);
    let grid = GridSpec::line(0, -1.0, 1.0, 16, vec![0.0]).unwrap();
    let mut group = c.benchmark_group("value_map");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, execution) in MODES {
        let mut opts = SweepOptions::default();
        opts.solve.execution = execution;
        group.bench_with_input(BenchmarkId::new("oscillator", name), &opts, |b, opts| {
            b.iter(|| sweep::value_map(&spec, black_box(&grid), opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, multistart, value_sweep);
criterion_main!(benches);
