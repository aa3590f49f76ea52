//! Compares the data-parallel inner loops (rayon, default `parallel`
//! feature) against a single-worker pool standing in for the sequential
//! fallback. Run with `cargo bench -p vfpk-core`.

use criterion::{criterion_group, criterion_main, Criterion};

use vfpk_core::grid::SpatialGrid;
use vfpk_core::hermite::{HermiteBasis, PhaseSpaceState};
use vfpk_core::kernels::InteractionKernel;
use vfpk_core::potentials::ConfinementPotential;
use vfpk_core::solver::{Background, EvolveConfig, Limiter, Mode, Stepper, Transport};
use vfpk_core::steady::{FixedPoint, SolveOptions};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn gaussian_state(basis: &HermiteBasis, grid: &SpatialGrid) -> PhaseSpaceState {
    let mut state = PhaseSpaceState::zero(basis, grid).unwrap();
    for i in 0..grid.len() {
        let x = grid.point(i)[0];
        state.row_mut(0)[i] = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        state.row_mut(1)[i] = 0.1 * (-0.5 * x * x).exp();
    }
    state
}

fn bench_strang_step(c: &mut Criterion) {
    let grid = SpatialGrid::isotropic(1, 10.0, 2048).unwrap();
    let basis = HermiteBasis::new(64).unwrap();
    let potential = ConfinementPotential::quadratic(1);
    let kernel = InteractionKernel::synchrotron(0.1);
    let bg = Background::new(&potential, &kernel, &grid, None).unwrap();
    let mut cfg = EvolveConfig {
        nu: 1.0,
        dt: 5e-4,
        limiter: Limiter::None,
        mode: Mode::Nonlinear,
        ..Default::default()
    };
    cfg.monitor.track_functionals = false;

    let mut group = c.benchmark_group("strang_step_2048x64");
    group.sample_size(20);
    for (name, threads) in [("parallel", 0usize), ("sequential", 1usize)] {
        let p = pool(if threads == 0 { num_threads_default() } else { threads });
        group.bench_function(name, |b| {
            p.install(|| {
                let mut stepper = Stepper::new(&basis, &grid, &bg, &cfg).unwrap();
                let mut state = gaussian_state(&basis, &grid);
                b.iter(|| {
                    stepper.step(&mut state, None).unwrap();
                });
            })
        });
    }
    group.finish();
}

fn bench_spectral_transport(c: &mut Criterion) {
    let grid = SpatialGrid::isotropic(1, 10.0, 4096).unwrap();
    let basis = HermiteBasis::new(64).unwrap();
    let potential = ConfinementPotential::quadratic(1);
    let kernel = InteractionKernel::zero(1);
    let bg = Background::new(&potential, &kernel, &grid, None).unwrap();
    let cfg = EvolveConfig {
        nu: 1.0,
        dt: 5e-4,
        transport: Transport::Spectral,
        mode: Mode::Nonlinear,
        ..Default::default()
    };

    let mut group = c.benchmark_group("spectral_transport_4096x64");
    group.sample_size(20);
    for (name, threads) in [("parallel", 0usize), ("sequential", 1usize)] {
        let p = pool(if threads == 0 { num_threads_default() } else { threads });
        group.bench_function(name, |b| {
            p.install(|| {
                let mut stepper = Stepper::new(&basis, &grid, &bg, &cfg).unwrap();
                let mut state = gaussian_state(&basis, &grid);
                b.iter(|| {
                    stepper.step_transport(&mut state, 2.5e-4).unwrap();
                });
            })
        });
    }
    group.finish();
}

fn bench_coulomb_convolution_3d(c: &mut Criterion) {
    let grid = SpatialGrid::isotropic(3, 8.0, 33).unwrap();
    let kernel = InteractionKernel::coulomb(1.0, 3).unwrap();
    let prep = kernel.prepare(&grid).unwrap();
    let rho: Vec<f64> = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp()
        })
        .collect();
    // Warm the kernel table cache before timing.
    let _ = prep.convolve_values(&rho, false).unwrap();

    let mut group = c.benchmark_group("coulomb_convolve_33^3");
    group.sample_size(20);
    for (name, threads) in [("parallel", 0usize), ("sequential", 1usize)] {
        let p = pool(if threads == 0 { num_threads_default() } else { threads });
        group.bench_function(name, |b| {
            p.install(|| {
                b.iter(|| prep.convolve_values(&rho, false).unwrap());
            })
        });
    }
    group.finish();
}

fn bench_picard_solve(c: &mut Criterion) {
    let grid = SpatialGrid::isotropic(1, 10.0, 1024).unwrap();
    let mut potential = ConfinementPotential::quadratic(1);
    potential.additive_constant = (2.0 * std::f64::consts::PI).sqrt().ln();
    let kernel = InteractionKernel::synchrotron(0.2);
    let opts = SolveOptions { tol: 1e-12, ..Default::default() };

    let mut group = c.benchmark_group("picard_steady_1024");
    group.sample_size(10);
    for (name, threads) in [("parallel", 0usize), ("sequential", 1usize)] {
        let p = pool(if threads == 0 { num_threads_default() } else { threads });
        group.bench_function(name, |b| {
            p.install(|| {
                b.iter(|| {
                    let fp = FixedPoint::new(&potential, &kernel, &grid).unwrap();
                    fp.solve(&kernel, &opts).unwrap()
                });
            })
        });
    }
    group.finish();
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

criterion_group!(
    benches,
    bench_strang_step,
    bench_spectral_transport,
    bench_coulomb_convolution_3d,
    bench_picard_solve
);
criterion_main!(benches);
