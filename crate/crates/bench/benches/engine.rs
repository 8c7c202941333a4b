use std::hint::black_box;

use actinf_core::envsim::make_tmaze;
use actinf_core::hmm::{exact_inference, sample_trajectory};
use actinf_core::learning::{learn, DirichletHmm, LearnOptions};
use actinf_core::planning::plan_reverse;
use actinf_core::random::random_hmm;
use actinf_core::{BeliefTrajectory, LogModel, SweepMode, SweepOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    for (s, horizon) in [(4, 10), (16, 10), (16, 50)] {
        let m = random_hmm(s, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let obs = sample_trajectory(&m, horizon, 2).observations;
        let bt = BeliefTrajectory::with_observations(LogModel::from_hmm(&m), horizon, &obs[..horizon / 2]).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("S{s}_T{horizon}")), |b| {
            b.iter(|| {
                let mut bt = bt.clone();
                black_box(bt.sweep(SweepMode::Smoothing, SweepOptions::default()).unwrap())
            })
        });
    }
    group.finish();
}

fn exact(c: &mut Criterion) {
    let m = random_hmm(4, 3, &mut ChaCha8Rng::seed_from_u64(3));
    let obs = sample_trajectory(&m, 6, 4).observations;
    c.bench_function("exact_inference/S4_T6", |b| b.iter(|| black_box(exact_inference(&m, &obs, 6).unwrap())));
}

fn planning(c: &mut Criterion) {
    let w = make_tmaze(0).unwrap();
    c.bench_function("plan_reverse/tmaze", |b| {
        b.iter(|| black_box(plan_reverse(&w.model, &w.actions, &w.policies, &[], &w.preference, w.horizon).unwrap()))
    });
}

fn learning(c: &mut Criterion) {
    let m = random_hmm(3, 3, &mut ChaCha8Rng::seed_from_u64(5));
    let seqs: Vec<Vec<usize>> = (0..10).map(|i| sample_trajectory(&m, 20, i).observations).collect();
    let prior = DirichletHmm::flat(3, 3, 1.0).unwrap();
    let opts = LearnOptions {
        outer_iters: 10,
        ..LearnOptions::default()
    };
    c.bench_function("learn/S3_10x20", |b| b.iter(|| black_box(learn(&prior, m.p0(), &seqs, opts).unwrap())));
}

criterion_group!(benches, sweep, exact, planning, learning);
criterion_main!(benches);
