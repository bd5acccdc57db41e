//! Entropy along McCann interpolations and the entropy–transport–barycenter
//! inequality.
//!
//! Interpolants between grid densities are piecewise uniform, so internal and
//! potential energies along them are evaluated exactly (Gauss–Legendre per
//! block). Polynomial interaction energies come from centred moments; Gaussian
//! bump interactions are rebinned at twice the endpoint resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy_fisher::{free_energy, relative_fisher};
use crate::error::{Error, Result};
use crate::measures::{gaussian_density_on_grid, default_gaussian_domain, GaussianState, GridDensity};
use crate::oracles::{gaussian_hwbi_sides, GaussianHwbiTerms};
use crate::pde::{GridConvolver, GridFields};
use crate::potentials::{InteractionSpec, Potential, PotentialSpec, Potentials};
use crate::measures::AtomicMeasure;
use crate::transport::{brenier_map_1d, displacement_pieces, wasserstein2_sq_1d, PiecewiseUniform};

/// Intervals of the default convexity profile (33 nodes).
pub const PROFILE_INTERVALS: usize = 32;
/// Slack allowed on second differences of the profile.
pub const SECOND_DIFFERENCE_TOL: f64 = 1e-3;

fn barycenter_1d(p: &GridDensity) -> f64 {
    p.values().iter().enumerate().map(|(i, v)| v * p.midpoint(i)).sum::<f64>() * p.dx() / p.mass()
}

/// Exact barycenter of the histogram (cell midpoint times cell mass).
fn shift_sq(nu0: &GridDensity, nu1: &GridDensity) -> f64 {
    (barycenter_1d(nu0) - barycenter_1d(nu1)).powi(2)
}

/// `int <grad log r0, T(x) - x> rho0` with `T` the monotone map onto `nu1`.
pub fn entropy_derivative_at_zero(nu0: &GridDensity, nu1: &GridDensity, v: &PotentialSpec, w: &InteractionSpec) -> Result<f64> {
    Ok(derivative_terms(nu0, nu1, v, w)?.0)
}

/// Derivative and `||T - x||_{L2(rho0)}` by the same midpoint quadrature.
fn derivative_terms(nu0: &GridDensity, nu1: &GridDensity, v: &PotentialSpec, w: &InteractionSpec) -> Result<(f64, f64)> {
    let map = brenier_map_1d(nu0, nu1)?;
    let fields = GridFields::new(nu0, &Potentials::new(v.clone(), w.clone()));
    let (mut d, mut n2) = (0.0, 0.0);
    for i in 0..fields.x.len() {
        let disp = map.eval(fields.x[i]) - fields.x[i];
        d += fields.relative_score[i] * disp * fields.weights[i];
        n2 += disp * disp * fields.weights[i];
    }
    Ok((d, n2.sqrt()))
}

/// `1/2 int int W(x - y) dnu dnu` for a piecewise-uniform measure.
fn interaction_energy(nu: &PiecewiseUniform, w: &InteractionSpec, bump_grid: (f64, f64, usize)) -> Result<f64> {
    let pot = w.potential();
    let mut out = 0.0;
    if let Some(deg) = pot.degree() {
        let mean = nu.mean();
        let mut moments = vec![0.0; 2 * deg + 1];
        nu.for_each_atom(&mut |x: &[f64], weight: f64| {
            let z = x[0] - mean;
            let mut zp = 1.0;
            for m in moments.iter_mut() {
                *m += weight * zp;
                zp *= z;
            }
        });
        // (x - y)^k = sum_j C(k, j) x^j (-y)^{k-j}
        for (k, c) in pot.poly.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let mut binom = 1.0;
            let mut acc = 0.0;
            for j in 0..=k {
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                acc += binom * sign * moments[j] * moments[k - j];
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
            out += 0.5 * c * acc;
        }
    }
    if pot.has_bumps() {
        let bumps = InteractionSpec::new(Potential::polynomial_bumps(vec![], pot.bumps.clone()))?;
        let (lo, hi, cells) = bump_grid;
        let grid = nu.rebin(lo, hi, cells)?;
        let mut conv = vec![0.0; cells];
        GridConvolver::new(&bumps, lo, hi, cells).apply(grid.values(), Some(&mut conv), None);
        out += 0.5 * grid.values().iter().zip(&conv).map(|(p, c)| p * c).sum::<f64>() * grid.dx();
    }
    Ok(out)
}

/// Samples of the three energies along the interpolation, with central
/// second differences at interior nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProfile {
    pub t: Vec<f64>,
    pub internal: Vec<f64>,
    pub potential: Vec<f64>,
    pub interaction: Vec<f64>,
    pub total: Vec<f64>,
    /// Second differences at `t[1..K]`.
    pub internal_dd: Vec<f64>,
    pub potential_dd: Vec<f64>,
    pub interaction_dd: Vec<f64>,
    pub total_dd: Vec<f64>,
    pub w2_sq: f64,
    pub bary_shift_sq: f64,
    pub kappa_v: f64,
    pub kappa_w: f64,
}

fn second_differences(y: &[f64], h: f64) -> Vec<f64> {
    y.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]) / (h * h)).collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

impl ConvexityProfile {
    pub fn step(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    /// `min f''`; displacement convexity asks for `>= 0`.
    pub fn internal_gap(&self) -> f64 {
        min_of(&self.internal_dd)
    }

    /// `min g'' - kappa_V W2^2`.
    pub fn potential_gap(&self) -> f64 {
        min_of(&self.potential_dd) - self.kappa_v * self.w2_sq
    }

    /// `min h'' - kappa_W (W2^2 - |db|^2)`.
    pub fn interaction_gap(&self) -> f64 {
        min_of(&self.interaction_dd) - self.kappa_w * (self.w2_sq - self.bary_shift_sq)
    }

    pub fn bounds_hold(&self, tol: f64) -> bool {
        self.internal_gap() >= -tol && self.potential_gap() >= -tol && self.interaction_gap() >= -tol
    }

    /// `int_0^1 (1 - t) F''(t) dt` by the trapezoid rule, with the endpoint
    /// second derivatives extrapolated linearly from the interior.
    pub fn taylor_remainder(&self) -> f64 {
        let dd = &self.total_dd;
        let n = dd.len();
        let mut vals = Vec::with_capacity(n + 2);
        vals.push(2.0 * dd[0] - dd[1]);
        vals.extend_from_slice(dd);
        vals.push(2.0 * dd[n - 1] - dd[n - 2]);
        let h = self.step();
        let mut acc = 0.0;
        for k in 1..vals.len() {
            let (a, b) = (1.0 - self.t[k - 1], 1.0 - self.t[k]);
            acc += 0.5 * h * (a * vals[k - 1] + b * vals[k]);
        }
        acc
    }

    /// `F(1) - F(0) - F'(0+) - int (1 - t) F''`.
    pub fn taylor_residual(&self, derivative_at_zero: f64) -> f64 {
        let n = self.total.len();
        self.total[n - 1] - self.total[0] - derivative_at_zero - self.taylor_remainder()
    }
}

/// Energies of `nu_t` at `intervals + 1` uniform times.
pub fn convexity_profile(
    nu0: &GridDensity,
    nu1: &GridDensity,
    v: &PotentialSpec,
    w: &InteractionSpec,
    intervals: usize,
) -> Result<ConvexityProfile> {
    if intervals < 8 {
        return Err(Error::InvalidConfig(format!("profile needs at least 8 intervals, got {intervals}")));
    }
    let lo = nu0.lo.min(nu1.lo);
    let hi = nu0.hi.max(nu1.hi);
    let cells = ((hi - lo) / (0.5 * nu0.dx().min(nu1.dx()))).ceil() as usize;
    let t: Vec<f64> = (0..=intervals).map(|k| k as f64 / intervals as f64).collect();
    let samples: Vec<(f64, f64, f64)> = t
        .iter()
        .map(|t| {
            let nu = displacement_pieces(nu0, nu1, *t)?;
            let u = nu.internal_energy();
            let g = nu.integrate(|x| v.value_1d(x));
            let h = interaction_energy(&nu, w, (lo, hi, cells))?;
            Ok((u, g, h))
        })
        .collect::<Result<_>>()?;
    let internal: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let potential: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let interaction: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let total: Vec<f64> = samples.iter().map(|s| s.0 + s.1 + s.2).collect();
    let h = 1.0 / intervals as f64;
    Ok(ConvexityProfile {
        internal_dd: second_differences(&internal, h),
        potential_dd: second_differences(&potential, h),
        interaction_dd: second_differences(&interaction, h),
        total_dd: second_differences(&total, h),
        t,
        internal,
        potential,
        interaction,
        total,
        w2_sq: wasserstein2_sq_1d(nu0, nu1)?,
        bary_shift_sq: shift_sq(nu0, nu1),
        kappa_v: v.convexity_modulus,
        kappa_w: w.convexity_modulus(),
    })
}

/// Lower bound of the interaction energy's curvature and the identity behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionGap {
    /// `min_t h''(t) - kappa_W (W2^2 - |db|^2)`.
    pub gap: f64,
    pub w2_sq: f64,
    pub bary_shift_sq: f64,
    /// `1/2 int int |theta(x) - theta(y)|^2 dnu0 dnu0`, `theta = x - T(x)`.
    pub theta_spread: f64,
    /// `|theta_spread - (W2^2 - |db|^2)|`.
    pub identity_residual: f64,
}

/// `1/2 int int |theta(x) - theta(y)|^2` summed pair by pair over quantile blocks.
fn theta_spread(nu0: &GridDensity, nu1: &GridDensity) -> Result<f64> {
    // theta is linear in u on each block of the common refinement
    let mut blocks: Vec<(f64, f64, f64)> = vec![];
    let map = brenier_map_1d(nu0, nu1)?;
    for k in 1..map.x.len() {
        let (xa, xb) = (map.x[k - 1], map.x[k]);
        if xb <= xa {
            continue;
        }
        let du = nu0.cdf(xb) - nu0.cdf(xa);
        if du <= 0.0 {
            continue;
        }
        let (d0, d1) = (xa - map.y[k - 1], xb - map.y[k]);
        let mean = 0.5 * (d0 + d1);
        let var = (d1 - d0).powi(2) / 12.0;
        blocks.push((du, mean, var));
    }
    let mut acc = 0.0;
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            acc += a.0 * b.0 * (a.2 + b.2 + (a.1 - b.1).powi(2));
        }
        // same-block pairs: E|theta(u) - theta(v)|^2 = 2 var
        acc += 0.5 * a.0 * a.0 * 2.0 * a.2;
    }
    Ok(acc)
}

pub fn interaction_convexity_gap(nu0: &GridDensity, nu1: &GridDensity, w: &InteractionSpec) -> Result<InteractionGap> {
    let profile = convexity_profile(nu0, nu1, &PotentialSpec::zero(), w, PROFILE_INTERVALS)?;
    let spread = theta_spread(nu0, nu1)?;
    let bound = profile.w2_sq - profile.bary_shift_sq;
    Ok(InteractionGap {
        gap: profile.interaction_gap(),
        w2_sq: profile.w2_sq,
        bary_shift_sq: profile.bary_shift_sq,
        theta_spread: spread,
        identity_residual: (spread - bound).abs(),
    })
}

/// Every term of the inequality for one pair of densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HwbiReport {
    pub free_energy0: f64,
    pub free_energy1: f64,
    pub lhs: f64,
    pub fisher: f64,
    pub derivative: f64,
    pub term_derivative: f64,
    pub w2: f64,
    pub term_w2: f64,
    pub bary_shift_sq: f64,
    pub term_bary: f64,
    pub rhs: f64,
    pub margin: f64,
    pub cauchy_schwarz_rhs: f64,
    /// Margin with the derivative term replaced by `sqrt(I) W2`.
    pub cauchy_schwarz_margin: f64,
    /// `||T - x||` by the same quadrature as the derivative.
    pub transport_norm: f64,
    pub kappa_v: f64,
    pub kappa_w: f64,
}

pub fn hwbi_check(nu0: &GridDensity, nu1: &GridDensity, v: &PotentialSpec, w: &InteractionSpec) -> Result<HwbiReport> {
    let f0 = free_energy(nu0, v, w).total;
    let f1 = free_energy(nu1, v, w).total;
    if !f1.is_finite() || !f0.is_finite() {
        return Err(Error::Inapplicable("relative entropy of an endpoint is not finite".into()));
    }
    let (kv, kw) = (v.convexity_modulus, w.convexity_modulus());
    let (derivative, transport_norm) = derivative_terms(nu0, nu1, v, w)?;
    let fisher = relative_fisher(nu0, v, w);
    let w2_sq = wasserstein2_sq_1d(nu0, nu1)?;
    let w2 = w2_sq.sqrt();
    let bary = shift_sq(nu0, nu1);
    let term_derivative = -derivative;
    let term_w2 = -0.5 * (kv + kw) * w2_sq;
    let term_bary = 0.5 * kw * bary;
    let rhs = term_derivative + term_w2 + term_bary;
    let lhs = f0 - f1;
    let cs = fisher.sqrt() * w2;
    Ok(HwbiReport {
        free_energy0: f0,
        free_energy1: f1,
        lhs,
        fisher,
        derivative,
        term_derivative,
        w2,
        term_w2,
        bary_shift_sq: bary,
        term_bary,
        rhs,
        margin: rhs - lhs,
        cauchy_schwarz_rhs: cs,
        cauchy_schwarz_margin: cs + term_w2 + term_bary - lhs,
        transport_norm,
        kappa_v: kv,
        kappa_w: kw,
    })
}

/// One draw of the randomized Gaussian suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCase {
    pub index: usize,
    pub m0: f64,
    pub s0: f64,
    pub m1: f64,
    pub s1: f64,
    pub kappa_v: f64,
    pub kappa_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCaseResult {
    pub case: GaussianCase,
    pub numeric: HwbiReport,
    pub oracle: GaussianHwbiTerms,
    /// Largest difference over lhs, the three right-hand terms and the margin.
    pub max_term_error: f64,
    pub taylor_residual: f64,
    pub profile_bounds_hold: bool,
}

/// Cells of each endpoint grid in the Gaussian suite.
pub const SUITE_CELLS: usize = 2048;

pub fn gaussian_cases(count: usize, seed: u64) -> Vec<GaussianCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| GaussianCase {
            index,
            m0: rng.gen_range(-1.0..1.0),
            s0: rng.gen_range(0.5..1.5),
            m1: rng.gen_range(-1.0..1.0),
            s1: rng.gen_range(0.5..1.5),
            kappa_v: rng.gen_range(0.5..2.0),
            kappa_w: rng.gen_range(0.0..1.0),
        })
        .collect()
}

fn gaussian_grid(m: f64, s: f64, cells: usize) -> Result<GridDensity> {
    let g = GaussianState::new(m, s * s)?;
    let (lo, hi) = default_gaussian_domain(&g);
    gaussian_density_on_grid(&g, lo, hi, cells)
}

pub fn run_gaussian_case(case: &GaussianCase, cells: usize) -> Result<GaussianCaseResult> {
    let nu0 = gaussian_grid(case.m0, case.s0, cells)?;
    let nu1 = gaussian_grid(case.m1, case.s1, cells)?;
    let v = PotentialSpec::quadratic(case.kappa_v)?;
    let w = InteractionSpec::quadratic(case.kappa_w)?;
    let numeric = hwbi_check(&nu0, &nu1, &v, &w)?;
    let oracle = gaussian_hwbi_sides(case.m0, case.s0, case.m1, case.s1, case.kappa_v, case.kappa_w);
    let max_term_error = [
        (numeric.lhs, oracle.lhs),
        (numeric.term_derivative, oracle.term_derivative),
        (numeric.term_w2, oracle.term_w2),
        (numeric.term_bary, oracle.term_bary),
        (numeric.margin, oracle.margin),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);
    let profile = convexity_profile(&nu0, &nu1, &v, &w, PROFILE_INTERVALS)?;
    Ok(GaussianCaseResult {
        case: *case,
        numeric,
        oracle,
        max_term_error,
        taylor_residual: profile.taylor_residual(numeric.derivative),
        profile_bounds_hold: profile.bounds_hold(SECOND_DIFFERENCE_TOL),
    })
}

/// The randomized Gaussian suite, evaluated in parallel; order follows the draws.
pub fn gaussian_suite(count: usize, seed: u64, cells: usize) -> Result<Vec<GaussianCaseResult>> {
    gaussian_cases(count, seed).par_iter().map(|c| run_gaussian_case(c, cells)).collect()
}

/// Two-component Gaussian mixture on a grid.
pub fn bimodal_grid(centers: (f64, f64), spread: f64, weight: f64, lo: f64, hi: f64, cells: usize) -> Result<GridDensity> {
    let a = GaussianState::new(centers.0, spread * spread)?;
    let b = GaussianState::new(centers.1, spread * spread)?;
    let pa = gaussian_density_on_grid(&a, lo, hi, cells)?;
    let pb = gaussian_density_on_grid(&b, lo, hi, cells)?;
    let v = pa.values().iter().zip(pb.values()).map(|(x, y)| weight * x + (1.0 - weight) * y).collect();
    GridDensity::new(lo, hi, v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimodalCaseResult {
    pub index: usize,
    pub report: HwbiReport,
    pub taylor_residual: f64,
    pub profile_bounds_hold: bool,
}

/// Random bimodal pairs under `V = kv x^2/2`, `W = kw x^2/2`.
pub fn bimodal_suite(count: usize, seed: u64, cells: usize) -> Result<Vec<BimodalCaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<[f64; 8]> = (0..count)
        .map(|_| {
            [
                rng.gen_range(-2.0..-0.5),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.2..0.8),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..1.2),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    draws
        .par_iter()
        .enumerate()
        .map(|(index, d)| {
            let (lo, hi) = (-8.0, 8.0);
            let nu0 = bimodal_grid((d[0], d[1]), d[2], d[3], lo, hi, cells)?;
            let nu1 = gaussian_grid(d[4], d[5], cells)?;
            let v = PotentialSpec::quadratic(d[6])?;
            let w = InteractionSpec::quadratic(d[7])?;
            let report = hwbi_check(&nu0, &nu1, &v, &w)?;
            let profile = convexity_profile(&nu0, &nu1, &v, &w, PROFILE_INTERVALS)?;
            Ok(BimodalCaseResult {
                index,
                taylor_residual: profile.taylor_residual(report.derivative),
                profile_bounds_hold: profile.bounds_hold(SECOND_DIFFERENCE_TOL),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_endpoints() {
        let p = gaussian_grid(0.2, 0.8, 1024).unwrap();
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let w = InteractionSpec::quadratic(0.5).unwrap();
        let r = hwbi_check(&p, &p, &v, &w).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.derivative.abs() < 1e-12);
        assert_eq!(r.term_w2, 0.0);
        assert!(r.term_bary.abs() < 1e-24);
        assert!(r.margin.abs() < 1e-12);
    }

    #[test]
    fn gaussian_case_matches_oracle() {
        let case = GaussianCase { index: 0, m0: 0.3, s0: 0.7, m1: -0.4, s1: 1.2, kappa_v: 1.3, kappa_w: 0.6 };
        let r = run_gaussian_case(&case, SUITE_CELLS).unwrap();
        assert!(r.max_term_error < 1e-3, "{r:?}");
        assert!(r.numeric.margin >= -1e-6);
        assert!(r.taylor_residual.abs() < 1e-3, "{}", r.taylor_residual);
        assert!(r.profile_bounds_hold);
    }

    #[test]
    fn quadratic_profiles_have_exact_curvature() {
        let nu0 = gaussian_grid(0.0, 0.6, 2048).unwrap();
        let nu1 = gaussian_grid(0.0, 1.3, 2048).unwrap();
        let v = PotentialSpec::quadratic(1.7).unwrap();
        let w = InteractionSpec::quadratic(0.8).unwrap();
        let p = convexity_profile(&nu0, &nu1, &v, &w, PROFILE_INTERVALS).unwrap();
        for dd in &p.potential_dd {
            assert!((dd - 1.7 * p.w2_sq).abs() < 1e-3);
        }
        for dd in &p.interaction_dd {
            assert!((dd - 0.8 * p.w2_sq).abs() < 1e-3);
        }
        assert!(p.internal_gap() >= -SECOND_DIFFERENCE_TOL);
    }

    #[test]
    fn theta_identity() {
        let nu0 = bimodal_grid((-1.0, 1.2), 0.4, 0.3, -6.0, 6.0, 1024).unwrap();
        let nu1 = gaussian_grid(0.5, 0.9, 1024).unwrap();
        let g = interaction_convexity_gap(&nu0, &nu1, &InteractionSpec::quadratic(1.0).unwrap()).unwrap();
        assert!(g.identity_residual < 1e-6, "{g:?}");
        assert!(g.w2_sq - g.bary_shift_sq >= 0.0);
        assert!(g.gap.abs() < 1e-3);
    }

    #[test]
    fn translation_cancels_interaction_terms() {
        let nu0 = gaussian_grid(0.0, 0.8, 1024).unwrap();
        let c = 0.75;
        let nu1 = GridDensity::from_normalized(nu0.lo + c, nu0.hi + c, nu0.values().to_vec());
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let with = hwbi_check(&nu0, &nu1, &v, &InteractionSpec::quadratic(0.7).unwrap()).unwrap();
        let without = hwbi_check(&nu0, &nu1, &v, &InteractionSpec::zero()).unwrap();
        assert!((with.w2 * with.w2 - c * c).abs() < 1e-9);
        assert!((with.term_w2 - without.term_w2 + with.term_bary).abs() < 1e-6);
        assert!((with.margin - without.margin).abs() < 1e-6, "{} {}", with.margin, without.margin);
    }

    #[test]
    fn forward_difference_of_entropy() {
        let nu0 = gaussian_grid(0.2, 0.7, 2048).unwrap();
        let nu1 = gaussian_grid(-0.3, 1.1, 2048).unwrap();
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let w = InteractionSpec::quadratic(0.5).unwrap();
        let d = entropy_derivative_at_zero(&nu0, &nu1, &v, &w).unwrap();
        let nut = crate::transport::displacement_interpolation(&nu0, &nu1, 0.01).unwrap();
        let fd = (free_energy(&nut, &v, &w).total - free_energy(&nu0, &v, &w).total) / 0.01;
        assert!((fd - d).abs() < 0.05 * d.abs(), "{fd} vs {d}");
    }
}
