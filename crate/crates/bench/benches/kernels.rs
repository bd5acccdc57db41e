use criterion::{black_box, criterion_group, criterion_main, Criterion};

use mfentropy_core::entropy_fisher::fisher_process;
use mfentropy_core::mckv_sim::{simulate, InitialCondition, SimConfig};
use mfentropy_core::measures::gaussian_density_on_grid;
use mfentropy_core::pde::{PdeSolver, StepScratch};
use mfentropy_core::potentials::Potential;
use mfentropy_core::transport::wasserstein2_1d;
use mfentropy_core::{GaussianState, InteractionSpec, PotentialSpec, Potentials};

fn bumpy() -> Potentials {
    Potentials::new(
        PotentialSpec::new(Potential::quadratic_bump(1.0, 0.5, 1.0)).unwrap(),
        InteractionSpec::quadratic(0.2).unwrap(),
    )
}

fn interacting() -> Potentials {
    Potentials::new(PotentialSpec::zero(), InteractionSpec::quadratic(1.0).unwrap())
}

fn pde_step(c: &mut Criterion) {
    let g = GaussianState::new(0.5, 0.25).unwrap();
    let p0 = gaussian_density_on_grid(&g, -6.0, 6.0, 2048).unwrap();
    let pot = bumpy();
    let solver = PdeSolver::for_grid(&pot, &p0);
    let dt = 0.9 * solver.admissible_dt(p0.values());
    let mut p = p0.values().to_vec();
    let mut scratch = StepScratch::default();
    c.bench_function("pde_step_2048", |b| b.iter(|| solver.step_in_place(black_box(&mut p), dt, &mut scratch).unwrap()));
}

fn particle_steps(c: &mut Criterion) {
    let g = GaussianState::new(0.0, 0.1).unwrap();
    let n = 10_000;
    let init = InitialCondition::gaussian(g, n, 1).unwrap();
    let cfg = SimConfig::new(interacting(), n, 0.01, 1e-3, 1);
    c.bench_function("euler_10k_particles_10_steps", |b| b.iter(|| simulate(black_box(&cfg), &init).unwrap()));
}

fn transport(c: &mut Criterion) {
    let a = gaussian_density_on_grid(&GaussianState::new(0.0, 1.0).unwrap(), -8.0, 8.0, 2048).unwrap();
    let b = gaussian_density_on_grid(&GaussianState::new(1.0, 0.5).unwrap(), -6.0, 8.0, 2048).unwrap();
    c.bench_function("w2_grid_2048", |bch| bch.iter(|| wasserstein2_1d(black_box(&a), black_box(&b)).unwrap()));
}

fn fisher(c: &mut Criterion) {
    let g = GaussianState::new(0.0, 0.1).unwrap();
    let n = 5_000;
    let init = InitialCondition::gaussian(g, n, 2).unwrap();
    let mut cfg = SimConfig::new(interacting(), n, 1.0, 1e-3, 2);
    cfg.record_stride = 10;
    let bundle = simulate(&cfg, &init).unwrap();
    c.bench_function("fisher_process_5k_x_101", |b| b.iter(|| fisher_process(black_box(&bundle)).unwrap()));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = pde_step, particle_steps, transport, fisher
}
criterion_main!(kernels);
