use mfentropy_core::hwbi::{bimodal_suite, gaussian_suite, SUITE_CELLS};

#[test]
fn gaussian_suite_holds() {
    let results = gaussian_suite(100, 2024, SUITE_CELLS).unwrap();
    let worst_margin = results.iter().map(|r| r.numeric.margin).fold(f64::INFINITY, f64::min);
    let worst_err = results.iter().map(|r| r.max_term_error).fold(0.0, f64::max);
    let worst_taylor = results.iter().map(|r| r.taylor_residual.abs()).fold(0.0, f64::max);
    println!("margin {worst_margin:e} term error {worst_err:e} taylor {worst_taylor:e}");
    assert!(worst_margin >= -1e-6);
    assert!(worst_err < 1e-3);
    assert!(worst_taylor < 1e-3);
    for r in &results {
        assert!(r.profile_bounds_hold, "{:?}", r.case);
        assert!(r.numeric.cauchy_schwarz_rhs >= r.numeric.term_derivative - 1e-9);
    }
}

#[test]
fn bimodal_suite_holds() {
    let results = bimodal_suite(20, 77, 2048).unwrap();
    for r in &results {
        println!("{} margin {:e} taylor {:e}", r.index, r.report.margin, r.taylor_residual);
        assert!(r.report.margin >= -1e-6);
        assert!(r.taylor_residual.abs() < 1e-3);
        assert!(r.profile_bounds_hold);
    }
}
