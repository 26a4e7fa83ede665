//! Parallel vs sequential comparison on the batch workloads: exhaustive
//! binary enumeration with per-assignment NLP solves, and expert dataset
//! generation across instances.
//!
//! Run with `cargo bench -p gbd-core`. The parallel path uses the rayon
//! global pool; the sequential path maps the same closures in order.

use criterion::{criterion_group, criterion_main, Criterion, SamplingMode};
use gbd_core::engine::GbdLimits;
use gbd_core::master::binary_vector;
use gbd_core::nlp::{solve_subproblem, NlpOptions, DETERMINISTIC_SECONDS_PER_NEWTON};
use gbd_core::problem::ProblemInstance;
use gbd_core::testkit::nominal_instance;
use gbd_core::{imitation, par};

fn det_nlp() -> NlpOptions {
    NlpOptions {
        deterministic_time: Some(DETERMINISTIC_SECONDS_PER_NEWTON),
        ..NlpOptions::default()
    }
}

fn enumerate_all(inst: &ProblemInstance, parallel: bool) -> usize {
    let total = 1usize << inst.m;
    let candidates: Vec<Vec<u8>> = (0..total as u64)
        .map(|code| binary_vector(code, inst.m))
        .filter(|y| inst.pure_binary_ok(y, 1e-9))
        .collect();
    let opts = det_nlp();
    let solve = |y: &Vec<u8>| solve_subproblem(inst, y, &opts).map(|s| s.status).ok();
    let solved = if parallel {
        par::map_slice(&candidates, solve)
    } else {
        candidates.iter().map(solve).collect()
    };
    solved.into_iter().flatten().count()
}

fn bench_enumeration(c: &mut Criterion) {
    let inst = nominal_instance();
    let mut group = c.benchmark_group("binary_enumeration");
    group.sample_size(10);
    group.sampling_mode(SamplingMode::Flat);
    group.bench_function("parallel", |b| b.iter(|| enumerate_all(&inst, true)));
    group.bench_function("sequential", |b| b.iter(|| enumerate_all(&inst, false)));
    group.finish();
}

fn bench_dataset_generation(c: &mut Criterion) {
    let limits = GbdLimits::default();
    let opts = det_nlp();
    let mut group = c.benchmark_group("expert_dataset_8_instances");
    group.sample_size(10);
    group.sampling_mode(SamplingMode::Flat);
    // generate_expert_dataset fans out through par::map_indexed when the
    // parallel feature is on; the sequential baseline maps the same range
    group.bench_function("parallel", |b| {
        b.iter(|| imitation::generate_expert_dataset(8, 1, &limits, &opts).pairs.len())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            par::sequential::map_indexed(8, |i| {
                imitation::generate_expert_dataset_at(i as u64, 1, &limits, &opts)
                    .map(|p| p.len())
                    .unwrap_or(0)
            })
            .iter()
            .sum::<usize>()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_enumeration, bench_dataset_generation);
criterion_main!(benches);
