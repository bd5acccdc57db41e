use mfentropy_core::entropy_fisher::{free_energy, relative_entropy, relative_fisher, EntropyReference};
use mfentropy_core::hwbi::{convexity_profile, hwbi_check, SECOND_DIFFERENCE_TOL};
use mfentropy_core::measures::{barycenter, gaussian_density_on_grid, second_moment};
use mfentropy_core::mckv_sim::{replay, simulate, InitialCondition, SimConfig};
use mfentropy_core::oracles::{expected_dissipation, ou_variance};
use mfentropy_core::pde::{solve_curve, PdeSolver, StepScratch};
use mfentropy_core::potentials::{convolve_gradient, CompactBump, GaussianBump, Potential};
use mfentropy_core::transport::{brute_force_w2_sq, metric_slopes, wasserstein2_1d, wasserstein2_sq_1d};
use mfentropy_core::{
    GaussianState, GridDensity, InteractionSpec, ParticleEnsemble, PerturbationSpec, PotentialSpec, Potentials,
};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn gaussian(m: f64, s: f64, lo: f64, hi: f64, cells: usize) -> GridDensity {
    gaussian_density_on_grid(&GaussianState::new(m, s * s).unwrap(), lo, hi, cells).unwrap()
}

/// Random smooth positive density on `[-6, 6]`: a mixture of three normals.
fn mixture() -> impl Strategy<Value = GridDensity> {
    prop::collection::vec((-2.0..2.0f64, 0.4..1.2f64, 0.1..1.0f64), 3).prop_map(|comps| {
        let cells = 512;
        let mut v = vec![0.0; cells];
        for (m, s, w) in comps {
            let g = gaussian(m, s, -12.0, 12.0, cells);
            for (a, b) in v.iter_mut().zip(g.values()) {
                *a += w * b;
            }
        }
        GridDensity::new(-12.0, 12.0, v).unwrap()
    })
}

fn confinement() -> impl Strategy<Value = PotentialSpec> {
    (0.2..3.0f64, 0.0..1.0f64, 0.3..2.0f64)
        .prop_map(|(k, a, w)| PotentialSpec::new(Potential::quadratic_bump(k, a, w)).unwrap())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn gradients_match_finite_differences(
        k in 0.1..3.0f64, a in 0.0..1.0f64, w in 0.3..2.0f64, c in -1.0..1.0f64, x in -5.0..5.0f64,
    ) {
        let p = Potential::polynomial_bumps(
            vec![0.0, 0.0, 0.5 * k, 0.0, 0.01],
            vec![GaussianBump { amplitude: a, center: c, width: w }],
        );
        let spec = PotentialSpec::new(p).unwrap();
        let h = 1e-5;
        let fd = (spec.value_1d(x + h) - spec.value_1d(x - h)) / (2.0 * h);
        let g = spec.grad_1d(x);
        prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0));
        prop_assert!(spec.value_1d(x) >= 0.0);
    }

    #[test]
    fn interaction_is_even(k in 0.0..2.0f64, q in 0.0..0.5f64, x in -5.0..5.0f64) {
        let w = InteractionSpec::new(Potential::polynomial_bumps(vec![0.0, 0.0, k, 0.0, q], vec![])).unwrap();
        prop_assert_eq!(w.value_1d(x), w.value_1d(-x));
        prop_assert_eq!(w.grad_1d(x), -w.grad_1d(-x));
    }

    #[test]
    fn convolution_matches_direct_loop(pts in prop::collection::vec(-4.0..4.0f64, 2..200), x in -4.0..4.0f64) {
        let w = InteractionSpec::new(Potential::quadratic_bump(0.7, 0.3, 1.1)).unwrap();
        let n = pts.len();
        let e = ParticleEnsemble::new(1, pts.clone(), 0.0).unwrap();
        let got = convolve_gradient(&w, &e, &[x]).unwrap()[0];
        let mut direct = 0.0;
        for y in &pts {
            let mut g = [0.0];
            w.gradient(&[x - y], &mut g);
            direct += (1.0 / n as f64) * g[0];
        }
        prop_assert_eq!(got, direct);
    }

    #[test]
    fn symmetric_ensembles_feel_no_force_at_the_barycenter(
        half in prop::collection::vec(0.0..3.0f64, 1..100), c in -2.0..2.0f64,
    ) {
        let w = InteractionSpec::new(Potential::polynomial_bumps(
            vec![0.0, 0.0, 0.5, 0.0, 0.1],
            vec![GaussianBump { amplitude: 0.5, center: 0.0, width: 0.8 }],
        )).unwrap();
        let mut pts = vec![];
        for y in &half {
            pts.push(c + y);
            pts.push(c - y);
        }
        let e = ParticleEnsemble::new(1, pts, 0.0).unwrap();
        let g = convolve_gradient(&w, &e, &[c]).unwrap()[0];
        prop_assert!(g.abs() < 1e-12);
    }

    #[test]
    fn moments_match_direct_sums(pts in prop::collection::vec(-10.0..10.0f64, 2..500)) {
        let n = pts.len() as f64;
        let e = ParticleEnsemble::new(1, pts.clone(), 0.0).unwrap();
        let w = 1.0 / n;
        let (mut b, mut m2, mut tot) = (0.0, 0.0, 0.0);
        for x in &pts {
            b += w * x;
            m2 += w * (x * x);
            tot += w;
        }
        prop_assert_eq!(barycenter(&e)[0], b / tot);
        prop_assert_eq!(second_moment(&e), m2 / tot);
    }

    #[test]
    fn brute_force_transport_equals_sorted_matching(
        pairs in (2usize..=8).prop_flat_map(|n| (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
        )),
    ) {
        let (x, y) = pairs;
        let a = ParticleEnsemble::new(1, x.clone(), 0.0).unwrap();
        let b = ParticleEnsemble::new(1, y.clone(), 0.0).unwrap();
        let sorted = wasserstein2_sq_1d(&a, &b).unwrap();
        let brute = brute_force_w2_sq(&x, &y).unwrap();
        prop_assert!((sorted - brute).abs() < 1e-10);
    }

    #[test]
    fn ou_variance_recursion(t in 0.0..5.0f64, dt in 0.0..0.5f64, v0 in 0.01..4.0f64) {
        let lhs = ou_variance(t + dt, v0);
        let rhs = (-2.0 * dt).exp() * ou_variance(t, v0) + (1.0 - (-2.0 * dt).exp());
        prop_assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn expected_dissipation_nondecreasing(v0 in 0.05..3.0f64, s in 0.0..0.99f64, ds in 0.0..0.01f64) {
        prop_assert!(expected_dissipation(s + ds, v0, 1.0) >= expected_dissipation(s, v0, 1.0) - 1e-15);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn entropy_identities(p in mixture(), v in confinement(), kw in 0.0..1.0f64) {
        let w = InteractionSpec::quadratic(kw).unwrap();
        let f = free_energy(&p, &v, &w);
        prop_assert_eq!(f.total, f.internal_energy + f.potential_energy + f.interaction_energy);
        let h = relative_entropy(&p, &v, &w, EntropyReference::VsQ);
        prop_assert!((h - f.total).abs() < 1e-10);
        prop_assert!(relative_fisher(&p, &v, &w) >= 0.0);
    }

    #[test]
    fn wasserstein_metric_axioms(a in mixture(), b in mixture(), c in mixture(), shift in -3.0..3.0f64) {
        let ab = wasserstein2_1d(&a, &b).unwrap();
        let bc = wasserstein2_1d(&b, &c).unwrap();
        let ac = wasserstein2_1d(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-6);
        prop_assert!((ab - wasserstein2_1d(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(wasserstein2_1d(&a, &a).unwrap() == 0.0);
        let at = GridDensity::from_normalized(a.lo + shift, a.hi + shift, a.values().to_vec());
        let bt = GridDensity::from_normalized(b.lo + shift, b.hi + shift, b.values().to_vec());
        prop_assert!((wasserstein2_1d(&at, &bt).unwrap() - ab).abs() < 1e-9);
    }

    #[test]
    fn grid_scheme_conserves_mass_and_positivity(v in confinement(), kw in 0.0..1.0f64, m in -1.0..1.0f64) {
        let pot = Potentials::new(v, InteractionSpec::quadratic(kw).unwrap());
        let p0 = gaussian(m, 0.6, -6.0, 6.0, 256);
        let solver = PdeSolver::for_grid(&pot, &p0);
        let mut p = p0.values().to_vec();
        let dt = 0.9 * solver.admissible_dt(&p);
        let mut scratch = StepScratch::default();
        let dx = p0.dx();
        for _ in 0..50 {
            solver.step_in_place(&mut p, dt, &mut scratch).unwrap();
            let mass: f64 = p.iter().sum::<f64>() * dx;
            prop_assert!((mass - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn free_energy_decreases_along_the_flow(v in confinement(), kw in 0.0..1.0f64, m in -1.0..1.0f64) {
        let pot = Potentials::new(v, InteractionSpec::quadratic(kw).unwrap());
        let p0 = gaussian(m, 0.5, -6.0, 6.0, 256);
        let dt = 0.9 * PdeSolver::for_grid(&pot, &p0).admissible_dt(p0.values());
        let curve = solve_curve(&p0, &pot, 100.0 * dt, dt, 1).unwrap();
        let h: Vec<f64> = curve
            .iter()
            .map(|s| free_energy(&s.grid, &pot.confinement, &pot.interaction).total)
            .collect();
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn steepest_descent(
        amp in -0.5..0.5f64, center in -2.0..2.0f64, radius in 0.5..3.0f64, m in -1.0..1.0f64, s in 0.3..1.2f64,
    ) {
        let pot = Potentials::new(PotentialSpec::quadratic(1.0).unwrap(), InteractionSpec::quadratic(0.5).unwrap());
        let state = mfentropy_core::pde::PdeState::new(gaussian(m, s, -12.0, 12.0, 1024), 0.0, pot);
        let beta = PerturbationSpec::new(vec![CompactBump::mollifier(amp, center, radius)]).unwrap();
        let r = metric_slopes(&state, &beta).unwrap();
        if let Some(p) = r.perturbed_slope {
            prop_assert!(r.unperturbed_slope <= p + 1e-8);
        }
        let none = metric_slopes(&state, &PerturbationSpec::none()).unwrap();
        prop_assert!((none.unperturbed_slope - none.perturbed_slope.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn replay_is_bit_exact(seed in any::<u64>(), n in 2usize..40) {
        let pot = Potentials::new(PotentialSpec::quadratic(1.0).unwrap(), InteractionSpec::quadratic(0.3).unwrap());
        let init = InitialCondition::gaussian(GaussianState::new(0.1, 0.5).unwrap(), n, seed).unwrap();
        let cfg = SimConfig::new(pot, n, 0.05, 0.005, seed);
        let b = simulate(&cfg, &init).unwrap();
        prop_assert_eq!(replay(&b).unwrap(), b.paths.clone());
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn hwbi_holds_on_gaussian_pairs(
        m0 in -1.0..1.0f64, s0 in 0.5..1.5f64, m1 in -1.0..1.0f64, s1 in 0.5..1.5f64,
        kv in 0.5..2.0f64, kw in 0.0..1.0f64,
    ) {
        let nu0 = gaussian(m0, s0, m0 - 8.0 * s0, m0 + 8.0 * s0, 1024);
        let nu1 = gaussian(m1, s1, m1 - 8.0 * s1, m1 + 8.0 * s1, 1024);
        let v = PotentialSpec::quadratic(kv).unwrap();
        let w = InteractionSpec::quadratic(kw).unwrap();
        let r = hwbi_check(&nu0, &nu1, &v, &w).unwrap();
        prop_assert!(r.margin >= -1e-6);
        prop_assert!(r.cauchy_schwarz_rhs >= r.derivative.abs() - 1e-6);
        prop_assert!(r.cauchy_schwarz_margin >= r.margin - 1e-6);
        prop_assert!(r.w2 * r.w2 - r.bary_shift_sq >= -1e-12);
        let p = convexity_profile(&nu0, &nu1, &v, &w, 32).unwrap();
        prop_assert!(p.bounds_hold(SECOND_DIFFERENCE_TOL));
        prop_assert!(p.taylor_residual(r.derivative).abs() < 1e-3);
    }
}
