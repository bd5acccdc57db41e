use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use rayon::prelude::*;

use mfentropy_core::entropy_fisher::{
    compensator_expectation_check, dissipation_report, fisher_process, martingale_report,
    perturbed_dissipation_report, DissipationReport, FisherPath,
};
use mfentropy_core::hwbi::{bimodal_suite, gaussian_suite, hwbi_check, interaction_convexity_gap};
use mfentropy_core::mckv_sim::{simulate, simulate_perturbed, GridSpec, InitialCondition, Scheme, SimConfig, TrajectoryBundle};
use mfentropy_core::measures::{default_gaussian_domain, gaussian_density_on_grid};
use mfentropy_core::oracles::{expected_dissipation, expected_dissipation_quadrature, ou_variance};
use mfentropy_core::pde::{solve_at_times, solve_curve, PdeSolver, PdeState};
use mfentropy_core::potentials::CompactBump;
use mfentropy_core::rng::NoiseStream;
use mfentropy_core::transport::metric_slopes;
use mfentropy_core::{GaussianState, GridDensity, InteractionSpec, PerturbationSpec, PotentialSpec, Potentials};

use crate::config::RunConfig;
use crate::output::{col, line_svg, num, Table};

/// One named assertion of a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), detail, pass }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Files written, assertions evaluated and free-form lines for the terminal.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check::new(name, pass, detail));
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir).map_err(|e| anyhow!("output.dir: cannot create {}: {e}", dir.display()))?;
    Ok(dir)
}

fn write_svg(dir: &Path, name: &str, body: String, out: &mut Outcome) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    out.files.push(path);
    Ok(())
}

fn linear_potentials() -> Potentials {
    Potentials::new(PotentialSpec::quadratic(1.0).expect("valid"), InteractionSpec::zero())
}

fn interacting_potentials() -> Potentials {
    Potentials::new(PotentialSpec::zero(), InteractionSpec::quadratic(1.0).expect("valid"))
}

fn initial_law(cfg: &RunConfig) -> Result<GaussianState> {
    Ok(GaussianState::new(cfg.simulation.initial_mean, cfg.simulation.initial_variance)?)
}

fn run_simulation(cfg: &RunConfig, potentials: Potentials, scheme: Scheme) -> Result<TrajectoryBundle> {
    let s = &cfg.simulation;
    let seed = cfg.seed()?;
    let mut sc = SimConfig::new(potentials, s.particles, s.horizon, s.dt, seed);
    sc.scheme = scheme;
    sc.record_stride = s.record_stride;
    sc.score = s.score;
    sc.activation_time = cfg.potentials.activation_time;
    sc.grid = Some(GridSpec { lo: cfg.pde.lo, hi: cfg.pde.hi, cells: cfg.pde.cells });
    let init = InitialCondition::gaussian(initial_law(cfg)?, s.particles, seed)?;
    let bundle = if sc.potentials.active_perturbation().is_some() {
        simulate_perturbed(&sc, &init.at_time(sc.activation_time))?
    } else {
        simulate(&sc, &init)?
    };
    Ok(bundle)
}

/// Fisher-process table: time, the first `k` cumulative paths, ensemble mean, its standard error and
/// optionally a reference curve.
fn fisher_table(title: &str, path: &FisherPath, k: usize, oracle: Option<&[f64]>) -> Table {
    let mut cols = vec![col("s", "reversed time")];
    for i in 0..k {
        cols.push(col(format!("traj_{i}"), format!("cumulative Fisher information of particle {i}")));
    }
    cols.push(col("mean", "ensemble mean over all particles"));
    cols.push(col("std_err", "standard error of the ensemble mean"));
    if oracle.is_some() {
        cols.push(col("oracle", "closed-form expected path"));
    }
    let mut t = Table::new(title, cols);
    for j in 0..path.records() {
        let mut row = vec![path.s[j]];
        row.extend((0..k).map(|i| path.cumulative_of(i)[j]));
        row.push(path.mean_path[j]);
        row.push(path.std_err_path[j]);
        if let Some(o) = oracle {
            row.push(o[j]);
        }
        t.push_numbers(&row);
    }
    t
}

/// Figure data for the linear and the self-interacting example.
///
/// Both runs use the `[simulation]` section with the potentials fixed by the
/// figures; the `[potentials]` section is ignored here.
pub fn reproduce_figures(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let s = &cfg.simulation;
    let d = &cfg.diagnostics;
    let k = s.trajectories;
    let mut out = Outcome::default();
    let mut means: Vec<Vec<f64>> = vec![];
    let figures = [
        ("fig1", "linear example", linear_potentials(), Scheme::ExactOu, d.linear_tolerance),
        ("fig2", "self-interacting example", interacting_potentials(), Scheme::EulerMaruyama, d.interacting_tolerance),
    ];
    for (name, label, pot, scheme, tol) in figures {
        let bundle = run_simulation(cfg, pot, scheme)?;
        let path = fisher_process(&bundle)?;
        drop(bundle);
        let oracle: Vec<f64> = path.s.iter().map(|v| expected_dissipation(*v, s.initial_variance, s.horizon)).collect();
        let title = format!("{label}: cumulative Fisher information along reversed trajectories");
        out.files.push(fisher_table(&title, &path, k, Some(&oracle)).write(&dir, &format!("{name}.csv"), &hash)?);
        if cfg.output.svg {
            let trajs: Vec<Vec<f64>> = (0..k).map(|i| path.cumulative_of(i).to_vec()).collect();
            let mut series: Vec<(&str, &[f64], &str)> =
                trajs.iter().map(|t| ("trajectory", t.as_slice(), r##"stroke="#999" stroke-width="1""##)).collect();
            series.push(("mean", &path.mean_path, r#"stroke="black" stroke-width="3""#));
            series.push(("oracle", &oracle, r#"stroke="red" stroke-width="1.5" stroke-dasharray="6 4""#));
            write_svg(&dir, &format!("{name}.svg"), line_svg(label, &path.s, &series), &mut out)?;
        }
        for &p in &d.probe_times {
            let j = path.index_near(p);
            let rel = (path.mean_path[j] - oracle[j]).abs() / oracle[j].abs().max(f64::MIN_POSITIVE);
            out.push(
                &format!("{name}_mean_s{p}"),
                rel <= tol,
                format!("mean {:.6} (se {:.2e}) vs oracle {:.6}, rel err {rel:.2e} <= {tol}", path.mean_path[j], path.std_err_path[j], oracle[j]),
            );
        }
        if name == "fig1" {
            let bad = (0..k).filter(|i| path.cumulative_of(*i).windows(2).any(|w| w[1] < w[0])).count();
            out.push("fig1_nondecreasing", bad == 0, format!("{bad} of {k} trajectories decrease somewhere"));
        } else {
            let neg = (0..k).filter(|i| path.cumulative_of(*i).iter().any(|v| *v < 0.0)).count();
            out.push("fig2_negative_values", neg > 0, format!("{neg} of {k} trajectories attain a negative value"));
        }
        means.push(path.mean_path.clone());
    }
    let tol = d.linear_tolerance;
    let worst = means[0]
        .iter()
        .zip(&means[1])
        .skip(1)
        .map(|(a, b)| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    out.push("mean_paths_agree", worst <= tol, format!("max relative gap {worst:.2e} <= {tol}"));
    Ok(out)
}

fn pde_initial(cfg: &RunConfig, cells: usize) -> Result<GridDensity> {
    let p = &cfg.pde;
    let g = GaussianState::new(p.initial_mean, p.initial_variance)?;
    Ok(gaussian_density_on_grid(&g, p.lo, p.hi, cells)?)
}

fn stable_dt(cfg: &RunConfig, pot: &Potentials, p0: &GridDensity) -> f64 {
    cfg.pde.stability * PdeSolver::for_grid(pot, p0).admissible_dt(p0.values())
}

fn report_for(curve: &[PdeState], pot: &Potentials) -> Result<DissipationReport> {
    Ok(match pot.active_perturbation() {
        Some(beta) => perturbed_dissipation_report(curve, beta)?,
        None => dissipation_report(curve)?,
    })
}

fn dissipation_table(r: &DissipationReport, title: &str) -> Table {
    let mut t = Table::new(
        title,
        vec![
            col("t", "time"),
            col("free_energy", "entropy plus potential and interaction energy"),
            col("fisher", "relative Fisher information"),
            col("correction", "perturbation correction term (zero when unperturbed)"),
            col("cumulative", "trapezoid integral of the dissipation rate from 0 to t"),
            col("residual", "H(t) - H(0) + cumulative"),
        ],
    );
    for k in 0..r.times.len() {
        t.push_numbers(&[r.times[k], r.h_values[k], r.i_values[k], r.correction_values.get(k).copied().unwrap_or(0.0), r.cumulative[k], r.residuals[k]]);
    }
    t
}

/// Entropy dissipation identity along the grid solution, optionally under refinement.
pub fn dissipation(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let pot = cfg.potentials()?;
    let p = &cfg.pde;
    let tol = cfg.diagnostics.dissipation_tolerance;
    let mut out = Outcome::default();
    let coarse0 = pde_initial(cfg, p.cells)?;
    let (dt, fine) = if p.refine {
        let fine0 = pde_initial(cfg, 2 * p.cells)?;
        let dt_fine = p.dt.map(|v| 0.5 * v).unwrap_or_else(|| stable_dt(cfg, &pot, &fine0));
        (2.0 * dt_fine, Some((fine0, dt_fine)))
    } else {
        (p.dt.unwrap_or_else(|| stable_dt(cfg, &pot, &coarse0)), None)
    };
    let curve = solve_curve(&coarse0, &pot, p.horizon, dt, p.snapshot_stride)?;
    let r = report_for(&curve, &pot)?;
    drop(curve);
    out.files.push(dissipation_table(&r, "entropy dissipation along the grid solution").write(&dir, "dissipation.csv", &hash)?);
    out.lines.push(format!(
        "cells {} dt {dt:e}: H(0) = {:.8}, H(T) = {:.8}, max residual {:.3e}, max floor mass {:.1e}",
        p.cells,
        r.h_values[0],
        r.h_values[r.h_values.len() - 1],
        r.identity_residual,
        r.max_floor_mass
    ));
    out.push("identity_residual", r.identity_residual < tol, format!("{:.3e} < {tol:e}", r.identity_residual));
    if let Some((fine0, dt_fine)) = fine {
        let curve = solve_curve(&fine0, &pot, p.horizon, dt_fine, 2 * p.snapshot_stride)?;
        let rf = report_for(&curve, &pot)?;
        drop(curve);
        out.files.push(dissipation_table(&rf, "entropy dissipation, refined grid and step").write(&dir, "dissipation_refined.csv", &hash)?);
        out.lines.push(format!("cells {} dt {dt_fine:e}: max residual {:.3e}", 2 * p.cells, rf.identity_residual));
        out.push(
            "residual_halves",
            rf.identity_residual <= 0.5 * r.identity_residual,
            format!("{:.3e} <= 0.5 * {:.3e}", rf.identity_residual, r.identity_residual),
        );
    }
    Ok(out)
}

/// Bump parameters drawn uniformly: amplitude in [-0.5, 0.5], center in [-2, 2], radius in [0.5, 3].
pub fn random_bumps(count: usize, seed: u64) -> Vec<CompactBump> {
    let mut rng = NoiseStream::new(seed, 0);
    (0..count)
        .map(|_| {
            let a = rng.next_uniform() - 0.5;
            let c = 4.0 * rng.next_uniform() - 2.0;
            let r = 0.5 + 2.5 * rng.next_uniform();
            CompactBump::mollifier(a, c, r)
        })
        .collect()
}

/// Steepest-descent comparison of metric slopes and the metric-derivative cross-check.
pub fn gradient_flow(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let d = &cfg.diagnostics;
    let pot = cfg.potentials()?.unperturbed();
    let mut out = Outcome::default();
    let p0 = pde_initial(cfg, cfg.pde.cells)?;
    let dt = cfg.pde.dt.unwrap_or_else(|| stable_dt(cfg, &pot, &p0));
    let (t0, h) = (d.metric_time, d.metric_step);
    let start = if t0 > 0.0 {
        let mut c = solve_curve(&p0, &pot, t0, dt, usize::MAX)?;
        c.pop().expect("final state").grid
    } else {
        p0
    };
    let mut curve = solve_curve(&start, &pot, h, dt, 1)?;
    for s in &mut curve {
        s.time += t0;
    }
    let m = mfentropy_core::transport::metric_derivative(&curve, t0, h)?;
    let mut mt = Table::new(
        "metric derivative of the gradient-flow curve",
        vec![
            col("t", "time of the velocity evaluation"),
            col("velocity_norm", "L2 norm of the velocity field"),
            col("fd_ratio", "W2(p(t+h), p(t)) / h"),
            col("fd_ratio_half", "same with step h/2"),
            col("h", "finite-difference step"),
        ],
    );
    mt.push_numbers(&[m.time, m.velocity_norm, m.fd_ratio, m.fd_ratio_half, m.h]);
    out.files.push(mt.write(&dir, "metric_derivative.csv", &hash)?);
    let rel = (m.fd_ratio - m.velocity_norm).abs() / m.velocity_norm.max(f64::MIN_POSITIVE);
    let mtol = d.metric_tolerance;
    out.push(
        "metric_derivative",
        rel <= mtol,
        format!("|v| = {:.6}, W2 ratio = {:.6}, rel gap {rel:.2e} <= {mtol}", m.velocity_norm, m.fd_ratio),
    );

    let states = [&curve[0], &curve[curve.len() - 1]];
    let bumps = random_bumps(d.bump_count, d.bump_seed);
    let mut st = Table::new(
        "metric slopes of the free energy, unperturbed vs perturbed flow",
        vec![
            col("bump", "index of the random bump (-1 for the zero perturbation)"),
            col("amplitude", "bump amplitude"),
            col("center", "bump center"),
            col("radius", "support radius"),
            col("t", "time of the state"),
            col("unperturbed_slope", "signed slope along the unperturbed flow"),
            col("perturbed_slope", "signed slope along the perturbed flow (empty if degenerate)"),
            col("cosine", "cosine between the two velocity fields"),
        ],
    );
    let mut worst = f64::NEG_INFINITY;
    let mut worst_zero: f64 = 0.0;
    let mut degenerate = 0;
    let zero = PerturbationSpec::none();
    for state in states {
        let r = metric_slopes(state, &zero)?;
        let gap = (r.unperturbed_slope - r.perturbed_slope.unwrap_or(f64::NAN)).abs();
        worst_zero = worst_zero.max(if gap.is_nan() { f64::INFINITY } else { gap });
        st.push(vec![
            "-1".into(),
            num(0.0),
            num(0.0),
            num(0.0),
            num(state.time),
            num(r.unperturbed_slope),
            r.perturbed_slope.map(num).unwrap_or_default(),
            num(r.cosine),
        ]);
        for (i, b) in bumps.iter().enumerate() {
            let beta = PerturbationSpec::new(vec![*b])?;
            let r = metric_slopes(state, &beta)?;
            match r.perturbed_slope {
                Some(ps) => worst = worst.max(r.unperturbed_slope - ps),
                None => degenerate += 1,
            }
            st.push(vec![
                i.to_string(),
                num(b.amplitude),
                num(b.center),
                num(b.radius),
                num(state.time),
                num(r.unperturbed_slope),
                r.perturbed_slope.map(num).unwrap_or_default(),
                num(r.cosine),
            ]);
        }
    }
    out.files.push(st.write(&dir, "slopes.csv", &hash)?);
    let stol = d.slope_tolerance;
    out.push(
        "steepest_descent",
        worst <= stol,
        format!("max(unperturbed - perturbed) = {worst:.3e} <= {stol:e} over {} bumps ({degenerate} degenerate)", bumps.len()),
    );
    out.push("zero_perturbation_equal", worst_zero <= 1e-12, format!("max gap {worst_zero:.1e} <= 1e-12"));
    Ok(out)
}

fn suite_grid(m: f64, s: f64, cells: usize) -> Result<GridDensity> {
    let g = GaussianState::new(m, s * s)?;
    let (lo, hi) = default_gaussian_domain(&g);
    Ok(gaussian_density_on_grid(&g, lo, hi, cells)?)
}

/// Randomized entropy–transport inequality suites.
pub fn hwbi(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let d = &cfg.diagnostics;
    let mut out = Outcome::default();
    let results = gaussian_suite(d.hwbi_cases, d.hwbi_seed, d.hwbi_cells)?;
    let mut t = Table::new(
        "entropy-transport inequality on random Gaussian pairs",
        vec![
            col("case", "case index"),
            col("m0", "mean of the first law"),
            col("s0", "standard deviation of the first law"),
            col("m1", "mean of the second law"),
            col("s1", "standard deviation of the second law"),
            col("kappa_v", "confinement curvature"),
            col("kappa_w", "interaction curvature"),
            col("lhs", "F(first) - F(second)"),
            col("derivative_term", "first-variation term"),
            col("w2_term", "curvature times squared W2"),
            col("barycenter_term", "interaction curvature times squared barycenter shift"),
            col("rhs", "sum of the right-hand terms"),
            col("margin", "rhs - lhs"),
            col("oracle_margin", "closed-form margin"),
            col("max_term_error", "largest deviation of any term from the closed form"),
        ],
    );
    for r in &results {
        let (c, n) = (&r.case, &r.numeric);
        t.push(vec![
            c.index.to_string(),
            num(c.m0),
            num(c.s0),
            num(c.m1),
            num(c.s1),
            num(c.kappa_v),
            num(c.kappa_w),
            num(n.lhs),
            num(n.term_derivative),
            num(n.term_w2),
            num(n.term_bary),
            num(n.rhs),
            num(n.margin),
            num(r.oracle.margin),
            num(r.max_term_error),
        ]);
    }
    out.files.push(t.write(&dir, "hwbi.csv", &hash)?);
    let worst_margin = results.iter().map(|r| r.numeric.margin).fold(f64::INFINITY, f64::min);
    let worst_term = results.iter().map(|r| r.max_term_error).fold(0.0, f64::max);
    let mtol = d.margin_tolerance;
    let ttol = d.term_tolerance;
    out.push("gaussian_margins", worst_margin >= -mtol, format!("min margin {worst_margin:.3e} >= -{mtol:e}"));
    out.push("gaussian_terms_vs_oracle", worst_term <= ttol, format!("max term error {worst_term:.3e} <= {ttol:e}"));

    // Translate the first law onto the second mean: the interaction terms must cancel,
    // and the spread of the pair difference must equal W2^2 - |shift|^2.
    let identities: Vec<(f64, f64, f64)> = results
        .par_iter()
        .map(|r| -> Result<(f64, f64, f64)> {
            let c = &r.case;
            let nu0 = suite_grid(c.m0, c.s0, d.hwbi_cells)?;
            let shift = c.m1 - c.m0;
            let moved = GridDensity::from_normalized(nu0.lo + shift, nu0.hi + shift, nu0.values().to_vec());
            let v = PotentialSpec::quadratic(c.kappa_v)?;
            let w = InteractionSpec::quadratic(c.kappa_w)?;
            let with = hwbi_check(&nu0, &moved, &v, &w)?;
            let without = hwbi_check(&nu0, &moved, &v, &InteractionSpec::zero())?;
            let cancel = (with.term_w2 - without.term_w2 + with.term_bary).abs();
            let margin_gap = (with.margin - without.margin).abs();
            let nu1 = suite_grid(c.m1, c.s1, d.hwbi_cells)?;
            let gap = interaction_convexity_gap(&nu0, &nu1, &w)?;
            Ok((cancel, margin_gap, gap.identity_residual))
        })
        .collect::<Result<_>>()?;
    let itol = d.identity_tolerance;
    let cancel = identities.iter().map(|v| v.0.max(v.1)).fold(0.0, f64::max);
    let theta = identities.iter().map(|v| v.2).fold(0.0, f64::max);
    out.push("translation_cancellation", cancel <= itol, format!("max residual {cancel:.3e} <= {itol:e}"));
    out.push("spread_identity", theta <= itol, format!("max residual {theta:.3e} <= {itol:e}"));

    if d.bimodal_cases > 0 {
        let bim = bimodal_suite(d.bimodal_cases, d.bimodal_seed, d.hwbi_cells)?;
        let mut bt = Table::new(
            "entropy-transport inequality on random two-component mixtures",
            vec![
                col("case", "case index"),
                col("lhs", "F(first) - F(second)"),
                col("rhs", "sum of the right-hand terms"),
                col("margin", "rhs - lhs"),
                col("taylor_residual", "second-order remainder of the free-energy profile"),
            ],
        );
        for r in &bim {
            bt.push(vec![r.index.to_string(), num(r.report.lhs), num(r.report.rhs), num(r.report.margin), num(r.taylor_residual)]);
        }
        out.files.push(bt.write(&dir, "hwbi_bimodal.csv", &hash)?);
        let worst = bim.iter().map(|r| r.report.margin).fold(f64::INFINITY, f64::min);
        out.push("bimodal_margins", worst >= -mtol, format!("min margin {worst:.3e} >= -{mtol:e}"));
    }
    Ok(out)
}

/// Closed-form expected cumulative Fisher information, cross-checked by quadrature.
pub fn oracle(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let d = &cfg.diagnostics;
    let (var0, horizon) = (d.oracle_variance, d.oracle_time);
    let mut out = Outcome::default();
    let steps = 100;
    let mut t = Table::new(
        "expected cumulative Fisher information of the reversed linear example",
        vec![
            col("s", "reversed time"),
            col("expected", "closed form"),
            col("quadrature", "adaptive Simpson quadrature of the integrand"),
            col("variance", "variance of the law at physical time T - s"),
        ],
    );
    let mut worst: f64 = 0.0;
    for j in 0..=steps {
        let s = horizon * j as f64 / steps as f64;
        let e = expected_dissipation(s, var0, horizon);
        let q = expected_dissipation_quadrature(s, var0, horizon, 1e-13);
        worst = worst.max((e - q).abs());
        t.push_numbers(&[s, e, q, ou_variance(horizon - s, var0)]);
    }
    out.files.push(t.write(&dir, "oracle.csv", &hash)?);
    let value = expected_dissipation(horizon, var0, horizon);
    out.lines.push(format!("{value:.6}"));
    out.push("quadrature_agrees", worst <= 1e-9, format!("max |closed form - quadrature| = {worst:.1e} <= 1e-9"));
    Ok(out)
}

/// Simulates the configured system and checks the martingale decomposition of its
/// cumulative Fisher information.
pub fn simulate_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let hash = cfg.hash();
    let d = &cfg.diagnostics;
    let pot = cfg.potentials()?;
    let scheme = cfg.scheme(&pot);
    let k = cfg.simulation.trajectories;
    let mut out = Outcome::default();
    let bundle = run_simulation(cfg, pot.clone(), scheme)?;
    let times = bundle.physical_times().to_vec();
    let mut pt = Table::new(
        "particle positions at the recorded times",
        std::iter::once(col("t", "physical time"))
            .chain((0..k).map(|i| col(format!("x_{i}"), format!("position of particle {i}"))))
            .collect(),
    );
    for (j, t) in times.iter().enumerate() {
        let mut row = vec![*t];
        row.extend((0..k).map(|i| bundle.path_1d(i)[j]));
        pt.push_numbers(&row);
    }
    out.files.push(pt.write(&dir, "paths.csv", &hash)?);

    let path = fisher_process(&bundle)?;
    out.files.push(fisher_table("cumulative Fisher information along reversed trajectories", &path, k, None).write(&dir, "fisher.csv", &hash)?);
    let m = martingale_report(&bundle, &path)?;
    let mut mt = Table::new(
        "ensemble statistics of the martingale part",
        vec![
            col("s", "reversed time"),
            col("mean", "ensemble mean of the martingale part"),
            col("std_err", "standard error"),
            col("t_stat", "mean / std_err"),
        ],
    );
    for p in &m.probes {
        mt.push_numbers(&[p.s, p.mean, p.std_err, p.t_stat]);
    }
    out.files.push(mt.write(&dir, "martingale.csv", &hash)?);
    let tl = d.martingale_t_limit;
    let worst_t = m.probes.iter().map(|p| p.t_stat.abs()).fold(0.0, f64::max);
    out.push("martingale_mean", worst_t < tl, format!("max |t| {worst_t:.2} < {tl}"));
    let [qlo, qhi] = d.qv_band;
    out.push(
        "quadratic_variation",
        (qlo..=qhi).contains(&m.qv_ratio),
        format!("realized / integrated = {:.4} in [{qlo}, {qhi}]", m.qv_ratio),
    );

    drop(bundle);
    let p0 = simulation_initial_grid(cfg)?;
    let curve = solve_at_times(&p0, &pot, &times, cfg.pde.stability)?;
    let c = compensator_expectation_check(&path, &curve)?;
    let mut ct = Table::new(
        "ensemble mean of the cumulative process vs the integrated dissipation",
        vec![
            col("s", "reversed time"),
            col("mean_cumulative", "ensemble mean"),
            col("std_err", "standard error"),
            col("integral", "integral of the grid dissipation rate"),
            col("tolerance", "1% of the integral plus three standard errors"),
        ],
    );
    for p in &c.probes {
        ct.push_numbers(&[p.s, p.mean_cumulative, p.std_err, p.integral, p.tolerance]);
    }
    out.files.push(ct.write(&dir, "compensator.csv", &hash)?);
    out.push("compensator", c.pass, format!("max |mean - integral| {:.3e}", c.max_residual));
    Ok(out)
}

fn simulation_initial_grid(cfg: &RunConfig) -> Result<GridDensity> {
    let g = initial_law(cfg)?;
    Ok(gaussian_density_on_grid(&g, cfg.pde.lo, cfg.pde.hi, cfg.pde.cells)?)
}
