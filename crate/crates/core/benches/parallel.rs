//! Single-thread pool against the default pool on the hot kernels. Build with
//! `--no-default-features` to time the plain sequential loops instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::f64::consts::PI;
use wavecorpuscle::dynamics::{ChargeState, ExternalField, Propagator, SystemState};
use wavecorpuscle::eigensolver::{solve_level, EigenConfig};
use wavecorpuscle::fields::{CartesianGrid, PoissonSolver};
use wavecorpuscle::nonlin::{Nonlinearity, NonlinearityKind};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("all-threads", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn split_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("split_step");
    g.sample_size(10);
    for n in [32, 64] {
        let grid = CartesianGrid::new(n, 8.0).unwrap();
        let nl = Nonlinearity::new(NonlinearityKind::LogGaussian, 1.0).unwrap();
        let charge = ChargeState::corpuscle(&grid, nl, 1.0, 1.0, 1.0, [0.5, 0.0, 0.0], [0.0, 0.2, 0.0]).unwrap();
        let base = SystemState::new(grid, vec![charge], ExternalField::harmonic(0.5));
        for (name, pool) in pools() {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                let mut prop = Propagator::new(grid);
                let mut sys = base.clone();
                b.iter(|| pool.install(|| prop.step(&mut sys, 0.001).unwrap()));
            });
        }
    }
    g.finish();
}

fn poisson(c: &mut Criterion) {
    let mut g = c.benchmark_group("poisson");
    g.sample_size(10);
    for n in [32, 64] {
        let grid = CartesianGrid::new(n, 10.0).unwrap();
        let rho: Vec<f64> = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                PI.powf(-1.5) * (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
            })
            .collect();
        let solver = PoissonSolver::new(grid);
        for (name, pool) in pools() {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| b.iter(|| pool.install(|| solver.solve(&rho, 1.0).unwrap())));
        }
    }
    g.finish();
}

fn level_sweep(c: &mut Criterion) {
    use rayon::prelude::*;
    let mut g = c.benchmark_group("level_sweep");
    g.sample_size(10);
    let configs: Vec<EigenConfig> = (1..=3).map(|n| EigenConfig::new(0.05, n).unwrap()).collect();
    for (name, pool) in pools() {
        g.bench_function(name, |b| b.iter(|| pool.install(|| configs.par_iter().map(|c| solve_level(c).unwrap().omega).collect::<Vec<_>>())));
    }
    g.finish();
}

criterion_group!(benches, split_step, poisson, level_sweep);
criterion_main!(benches);
