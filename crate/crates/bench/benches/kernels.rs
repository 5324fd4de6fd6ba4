//! Hot-path benchmarks: Hamiltonian evaluation, one Gillespie path, a
//! Bellman sweep of the resolvent solver, the doubling maximization, and
//! the trajectory action.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use fluxldp_core::hj::{
    doubling_diagnostic, resolvent_solve, ControlCatalog, Grid, GridFunction, PenaltyParams,
    ResolventParams,
};
use fluxldp_core::kernel::{constant_kernel, glauber_kernel, potts_gradient};
use fluxldp_core::rate::{action_integral, hamiltonian};
use fluxldp_core::sim::{mean_field_ode, simulate, MicroRates, ParticleConfig};
use fluxldp_core::space::{FluxVector, Measure, Momentum, Point, StateSpace};

fn bench_hamiltonian(c: &mut Criterion) {
    let space = Arc::new(StateSpace::new(3).unwrap());
    let kernel = glauber_kernel(space.clone(), vec![1.0; 6], potts_gradient(0.8)).unwrap();
    let x = Point::new(
        Measure::new(vec![0.2, 0.3, 0.5]).unwrap(),
        FluxVector::zero(6),
    );
    let p = Momentum::new(vec![0.3, -0.1, 0.2], vec![0.1, -0.2, 0.05, 0.3, -0.15, 0.0]).unwrap();
    c.bench_function("hamiltonian_q3_glauber", |b| {
        b.iter(|| hamiltonian(black_box(&x), black_box(&p), black_box(&kernel)))
    });
}

fn bench_simulate(c: &mut Criterion) {
    let space = Arc::new(StateSpace::new(2).unwrap());
    let kernel = constant_kernel(space.clone(), vec![1.0, 1.0]).unwrap();
    let n = 1000;
    let mr = MicroRates::from_kernel(&kernel, n, 8.0).unwrap();
    let init = ParticleConfig::from_measure(&space, n, &Measure::uniform(2));
    let mut seed = 0u64;
    c.bench_function("gillespie_n1000_t1", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| simulate(&mr, &space, &init, 1.0, s).unwrap().events.len(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_resolvent(c: &mut Criterion) {
    let space = Arc::new(StateSpace::new(2).unwrap());
    let kernel = constant_kernel(space.clone(), vec![1.0, 1.0]).unwrap();
    let grid = Grid::new(space, 8, 2.0, 0.25).unwrap();
    let h = GridFunction::from_fn(grid.clone(), |p| p.measure.mass(0)).unwrap();
    let catalog = ControlCatalog::edgewise(&[0.0, 0.5, 1.0, 2.0, 4.0], 2).unwrap();
    let params = ResolventParams::new(0.5, 0.05, 1e-6, 100_000).unwrap();
    c.bench_function("resolvent_solve_m8", |b| {
        b.iter(|| resolvent_solve(black_box(&h), &kernel, &catalog, params).unwrap())
    });
}

fn bench_doubling(c: &mut Criterion) {
    let space = Arc::new(StateSpace::new(2).unwrap());
    let kernel = constant_kernel(space.clone(), vec![1.0, 1.0]).unwrap();
    let grid = Grid::new(space, 8, 1.0, 0.25).unwrap();
    let u = GridFunction::from_fn(grid.clone(), |p| {
        0.4 * p.measure.mass(0) + 0.1 * p.flux.get(0)
    })
    .unwrap();
    let v = GridFunction::from_fn(grid.clone(), |p| 0.3 * p.measure.mass(0)).unwrap();
    let params = PenaltyParams::new(10.0, 10.0, 0.01).unwrap();
    c.bench_function("doubling_m8_ladder3", |b| {
        b.iter(|| doubling_diagnostic(&u, &v, &kernel, &params, &[10.0, 1e3, 1e6]).unwrap())
    });
}

fn bench_action(c: &mut Criterion) {
    let space = Arc::new(StateSpace::new(2).unwrap());
    let kernel = constant_kernel(space.clone(), vec![1.0, 1.0]).unwrap();
    let traj = mean_field_ode(&kernel, &Measure::new(vec![0.7, 0.3]).unwrap(), 1.0, 1e-3)
        .unwrap();
    c.bench_function("action_integral_1000_segments", |b| {
        b.iter(|| action_integral(black_box(&traj), &kernel).unwrap())
    });
}

criterion_group!(
    benches,
    bench_hamiltonian,
    bench_simulate,
    bench_resolvent,
    bench_doubling,
    bench_action
);
criterion_main!(benches);
