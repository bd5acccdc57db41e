use mfentropy_core::entropy_fisher::{compensator_expectation_check, dissipation_report, fisher_process, martingale_report};
use mfentropy_core::mckv_sim::{simulate, InitialCondition, Scheme, ScoreChoice, SimConfig, TrajectoryBundle};
use mfentropy_core::measures::{gaussian_density_on_grid, GaussianState};
use mfentropy_core::oracles::expected_dissipation;
use mfentropy_core::pde::{solve_at_times, PdeState};
use mfentropy_core::{InteractionSpec, PotentialSpec, Potentials};

fn ou() -> Potentials {
    Potentials::new(PotentialSpec::quadratic(1.0).unwrap(), InteractionSpec::zero())
}

fn nl() -> Potentials {
    Potentials::new(PotentialSpec::zero(), InteractionSpec::quadratic(1.0).unwrap())
}

fn run(pot: Potentials, scheme: Scheme, n: usize, score: ScoreChoice) -> TrajectoryBundle {
    let g = GaussianState::new(0.0, 0.1).unwrap();
    let init = InitialCondition::gaussian(g, n, 11).unwrap();
    let mut cfg = SimConfig::new(pot, n, 1.0, 1e-3, 11);
    cfg.scheme = scheme;
    cfg.record_stride = 10;
    cfg.score = score;
    simulate(&cfg, &init).unwrap()
}

fn grid_curve(b: &TrajectoryBundle) -> Vec<PdeState> {
    let g = GaussianState::new(0.0, 0.1).unwrap();
    let p0 = gaussian_density_on_grid(&g, -6.0, 6.0, 2048).unwrap();
    solve_at_times(&p0, &b.potentials, b.physical_times(), 0.9).unwrap()
}

fn check(b: &TrajectoryBundle, label: &str) {
    let path = fisher_process(b).unwrap();
    let oracle = expected_dissipation(1.0, 0.1, 1.0);
    let last = path.records() - 1;
    println!("{label}: mean F at 1 = {} +- {} (oracle {oracle})", path.mean_path[last], path.std_err_path[last]);
    assert!((path.mean_path[last] - oracle).abs() < 0.015 * oracle + 3.0 * path.std_err_path[last]);
    let m = martingale_report(b, &path).unwrap();
    for p in &m.probes {
        println!("  s={} mean M={:.5} se={:.5} t={:.2} dlog={:.5}", p.s, p.mean, p.std_err, p.t_stat, p.mean_log_ratio_change);
        assert!(p.t_stat.abs() < 4.0);
    }
    for c in &m.conditional {
        println!("  window [{}, {}] max |t| {:.2}", c.s_from, c.s_to, c.max_abs_t);
    }
    println!("  qv ratio {}", m.qv_ratio);
    assert!((0.9..=1.1).contains(&m.qv_ratio));
    let curve = grid_curve(b);
    let c = compensator_expectation_check(&path, &curve).unwrap();
    for p in &c.probes {
        println!("  compensator s={} mean={} integral={} tol={}", p.s, p.mean_cumulative, p.integral, p.tolerance);
    }
    assert!(c.pass);
    let d = dissipation_report(&curve).unwrap();
    let h = &d.h_values;
    for p in &m.probes {
        // reversed time s corresponds to physical time T - s
        let k = d.times.iter().position(|t| (t - (1.0 - p.s)).abs() < 1e-9).unwrap();
        let target = h[k] - h[h.len() - 1];
        println!("  dlog {} vs entropy change {}", p.mean_log_ratio_change, target);
        assert!((p.mean_log_ratio_change - target).abs() < 0.01 * target.abs() + 4.0 * p.log_ratio_std_err);
    }
}

#[test]
fn linear_example() {
    let b = run(ou(), Scheme::ExactOu, 4000, ScoreChoice::Auto);
    let path = fisher_process(&b).unwrap();
    assert!(path.min_integrand >= -1e-12);
    assert_eq!(path.copy_term_max, 0.0);
    for i in 0..20 {
        assert!(path.cumulative_of(i).windows(2).all(|w| w[1] >= w[0]));
    }
    check(&b, "ou");
}

#[test]
fn interacting_example() {
    let b = run(nl(), Scheme::EulerMaruyama, 4000, ScoreChoice::Auto);
    let path = fisher_process(&b).unwrap();
    assert!((0..b.particles).any(|i| path.cumulative_of(i).iter().any(|v| *v < 0.0)));
    check(&b, "nl");
}

#[test]
fn grid_scores_agree_with_analytic_scores() {
    let a = run(ou(), Scheme::ExactOu, 500, ScoreChoice::Auto);
    let g = run(ou(), Scheme::ExactOu, 500, ScoreChoice::Grid);
    let pa = fisher_process(&a).unwrap();
    let pg = fisher_process(&g).unwrap();
    let last = pa.records() - 1;
    println!("analytic {} grid {}", pa.mean_path[last], pg.mean_path[last]);
    assert!((pa.mean_path[last] - pg.mean_path[last]).abs() < 0.01 * pa.mean_path[last]);
}
