use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lis_bench::Fixture;
use lis_core::ekf::Estimator;
use lis_core::observability::{analyze, linearize, RANK_TOL};
use lis_core::sim::{advance, simulate, solve_algebraic};
use lis_core::{AlgebraicState, EstimatorConfig};

fn model_kernels(c: &mut Criterion) {
    let f = Fixture::new();
    let (x, z) = (f.high.x, f.high.z);
    c.bench_function("rates_and_output", |b| {
        b.iter(|| {
            (
                f.model.rates(black_box(&x), black_box(&z)).unwrap(),
                f.model.output(&x, &z).unwrap(),
            )
        })
    });
    c.bench_function("jacobians", |b| {
        b.iter(|| {
            (
                f.model.jac_f(black_box(&x), &z).unwrap(),
                f.model.jac_g(&x, &z).unwrap(),
                f.model.jac_h(&x, &z).unwrap(),
            )
        })
    });
    let guess = AlgebraicState::new(1.7, 0.0);
    c.bench_function("solve_algebraic_cold", |b| {
        b.iter(|| solve_algebraic(&f.model, black_box(&x), 1.7, &guess, f.opts()).unwrap())
    });
    for (name, r) in [("advance_1s_high", f.high), ("advance_1s_low", f.low)] {
        c.bench_function(name, |b| {
            b.iter(|| advance(&f.model, black_box(&r.x), &r.z, 1.7, 1.7, 1.0, f.opts()).unwrap())
        });
    }
}

fn estimator_kernels(c: &mut Criterion) {
    let f = Fixture::new();
    let est = Estimator::new(&f.model, EstimatorConfig::from_scenario(&f.scenario)).unwrap();
    let state = est.init(f.high.x, &f.high.z, 1.7).unwrap();
    let y = f.high.v_true + 1e-4;
    c.bench_function("ekf_step", |b| {
        b.iter(|| est.step(black_box(&state), y, 1.7).unwrap())
    });
    c.bench_function("observability_analyze", |b| {
        b.iter(|| {
            let sys = linearize(&f.model, black_box(&f.low.x), &f.low.z, 1.7).unwrap();
            analyze(&sys, RANK_TOL).unwrap()
        })
    });
}

fn full_runs(c: &mut Criterion) {
    let f = Fixture::new();
    let mut g = c.benchmark_group("full_runs");
    g.sample_size(10);
    g.bench_function("plant_5000s", |b| {
        b.iter(|| simulate(&f.model, black_box(&f.scenario)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, model_kernels, estimator_kernels, full_runs);
criterion_main!(benches);
