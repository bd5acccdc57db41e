//! Free energy, relative entropy and Fisher information on grids, and the
//! pathwise cumulative Fisher information of the time-reversed particle system.
//!
//! Along the time-reversed process `Xbar_s = X_{T-s}` the log-likelihood ratio
//! `log lbar = log pbar + V + (W * Pbar)/2` splits into a martingale plus the
//! cumulative integral of a pointwise integrand. Its expectation recovers the
//! relative Fisher information, which is what the reports below check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mckv_sim::{Snapshot, TrajectoryBundle};
use crate::measures::GridDensity;
use crate::pde::{interpolate_unchecked, score_field, GridConvolver, PdeState};
use crate::potentials::{InteractionSpec, PairKernel, PerturbationSpec, PotentialSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub internal_energy: f64,
    pub potential_energy: f64,
    pub interaction_energy: f64,
    pub total: f64,
    /// Mass added by flooring before the logarithm.
    pub floor_mass: f64,
}

/// `U + V + W` by midpoint quadrature.
pub fn free_energy(p: &GridDensity, v: &PotentialSpec, w: &InteractionSpec) -> FunctionalValue {
    let dx = p.dx();
    let mut conv = vec![0.0; p.cells()];
    GridConvolver::new(w, p.lo, p.hi, p.cells()).apply(p.values(), Some(&mut conv), None);
    let (mut u, mut pv, mut pw) = (0.0, 0.0, 0.0);
    for (i, pi) in p.values().iter().enumerate() {
        let m = pi * dx;
        if *pi > 0.0 {
            u += m * p.floored(i).ln();
        }
        pv += m * v.value_1d(p.midpoint(i));
        pw += m * conv[i];
    }
    let pw = 0.5 * pw;
    FunctionalValue {
        internal_energy: u,
        potential_energy: pv,
        interaction_energy: pw,
        total: u + pv + pw,
        floor_mass: p.floor_mass(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyReference {
    /// Against `e^{-V - (W*p)/2}`.
    VsQ,
    /// Against `e^{-V - W*p}`.
    VsQUp,
    VsLebesgue,
}

pub fn relative_entropy(p: &GridDensity, v: &PotentialSpec, w: &InteractionSpec, reference: EntropyReference) -> f64 {
    let f = free_energy(p, v, w);
    match reference {
        EntropyReference::VsQ => f.total,
        EntropyReference::VsQUp => f.internal_energy + f.potential_energy + 2.0 * f.interaction_energy,
        EntropyReference::VsLebesgue => f.internal_energy,
    }
}

/// `int |grad log p + grad V + grad W*p|^2 p`.
pub fn relative_fisher(p: &GridDensity, v: &PotentialSpec, w: &InteractionSpec) -> f64 {
    let score = score_field(p);
    let mut grad = vec![0.0; p.cells()];
    GridConvolver::new(w, p.lo, p.hi, p.cells()).apply(p.values(), None, Some(&mut grad));
    let dx = p.dx();
    p.values()
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let l = score[i] + v.grad_1d(p.midpoint(i)) + grad[i];
            l * l * pi * dx
        })
        .sum()
}

/// Perturbation correction to the dissipation rate, two ways:
/// `int (<V' + (W*p)', beta'> - beta'') p` and `int <L, beta'> p`.
pub fn perturbation_correction(p: &GridDensity, v: &PotentialSpec, w: &InteractionSpec, beta: &PerturbationSpec) -> (f64, f64) {
    let score = score_field(p);
    let mut grad = vec![0.0; p.cells()];
    GridConvolver::new(w, p.lo, p.hi, p.cells()).apply(p.values(), None, Some(&mut grad));
    let dx = p.dx();
    let (mut direct, mut ibp) = (0.0, 0.0);
    for (i, pi) in p.values().iter().enumerate() {
        let x = p.midpoint(i);
        let b = beta.grad_1d(x);
        let drift = v.grad_1d(x) + grad[i];
        direct += (drift * b - beta.laplacian_1d(x)) * pi * dx;
        ibp += (score[i] + drift) * b * pi * dx;
    }
    (direct, ibp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    pub times: Vec<f64>,
    pub h_values: Vec<f64>,
    pub i_values: Vec<f64>,
    /// Perturbation corrections (direct form); empty when unperturbed.
    pub correction_values: Vec<f64>,
    /// Same corrections in integration-by-parts form.
    pub correction_ibp_values: Vec<f64>,
    /// Trapezoid integral of the full rate from the first time.
    pub cumulative: Vec<f64>,
    pub residuals: Vec<f64>,
    pub identity_residual: f64,
    pub quadrature: String,
    /// Largest step-to-step increase of H (zero if monotone).
    pub max_increase: f64,
    pub max_floor_mass: f64,
}

fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    out.push(0.0);
    for k in 1..t.len() {
        let prev = out[k - 1];
        out.push(prev + 0.5 * (t[k] - t[k - 1]) * (y[k] + y[k - 1]));
    }
    out
}

fn build_report(curve: &[PdeState], beta: Option<&PerturbationSpec>) -> Result<DissipationReport> {
    if curve.len() < 3 {
        return Err(Error::MissingSnapshots("need at least 3 snapshots".into()));
    }
    let times: Vec<f64> = curve.iter().map(|s| s.time).collect();
    let mut h = Vec::with_capacity(curve.len());
    let mut i_values = Vec::with_capacity(curve.len());
    let mut corr = vec![];
    let mut corr_ibp = vec![];
    let mut floor: f64 = 0.0;
    for s in curve {
        let (v, w) = (&s.potentials.confinement, &s.potentials.interaction);
        let f = free_energy(&s.grid, v, w);
        floor = floor.max(f.floor_mass);
        h.push(f.total);
        i_values.push(relative_fisher(&s.grid, v, w));
        if let Some(b) = beta {
            let (d, ibp) = perturbation_correction(&s.grid, v, w, b);
            corr.push(d);
            corr_ibp.push(ibp);
        }
    }
    let rate: Vec<f64> = if beta.is_some() {
        i_values.iter().zip(&corr).map(|(a, b)| a + b).collect()
    } else {
        i_values.clone()
    };
    let cumulative = cumulative_trapezoid(&times, &rate);
    let residuals: Vec<f64> = (0..curve.len()).map(|k| (h[k] - h[0] + cumulative[k]).abs()).collect();
    let max_increase = h.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(DissipationReport {
        identity_residual: residuals.iter().cloned().fold(0.0, f64::max),
        times,
        h_values: h,
        i_values,
        correction_values: corr,
        correction_ibp_values: corr_ibp,
        cumulative,
        residuals,
        quadrature: "trapezoid".into(),
        max_increase,
        max_floor_mass: floor,
    })
}

/// Entropy and Fisher information along an unperturbed curve.
pub fn dissipation_report(curve: &[PdeState]) -> Result<DissipationReport> {
    build_report(curve, None)
}

/// As [`dissipation_report`], with the perturbation correction added to the rate.
pub fn perturbed_dissipation_report(curve: &[PdeState], beta: &PerturbationSpec) -> Result<DissipationReport> {
    if beta.is_zero() {
        return build_report(curve, None);
    }
    build_report(curve, Some(beta))
}

/// Density of one record, reduced to what the pathwise integrand needs.
enum LawView {
    Gaussian { mean: f64, variance: f64 },
    Grid { lo: f64, hi: f64, dx: f64, score: Vec<f64>, log_p: Vec<f64> },
}

impl LawView {
    fn new(s: &Snapshot) -> Self {
        match s {
            Snapshot::Gaussian(g) => LawView::Gaussian { mean: g.mean, variance: g.variance },
            Snapshot::Grid(p) => LawView::Grid {
                lo: p.lo,
                hi: p.hi,
                dx: p.dx(),
                score: score_field(p),
                log_p: p.log_values(),
            },
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        if let LawView::Grid { lo, hi, .. } = self {
            if x < *lo || x > *hi {
                return Err(Error::OutOfDomain { x, lo: *lo, hi: *hi });
            }
        }
        Ok(())
    }

    fn score(&self, x: f64) -> f64 {
        match self {
            LawView::Gaussian { mean, variance } => -(x - mean) / variance,
            LawView::Grid { lo, dx, score, .. } => interpolate_unchecked(*lo, *dx, score, x),
        }
    }

    fn log_p(&self, x: f64) -> f64 {
        match self {
            LawView::Gaussian { mean, variance } => {
                let z = x - mean;
                -0.5 * z * z / variance - 0.5 * (std::f64::consts::TAU * variance).ln()
            }
            LawView::Grid { lo, dx, log_p, .. } => interpolate_unchecked(*lo, *dx, log_p, x),
        }
    }
}

/// Pointwise quantities of every particle at one record.
struct SliceTerms {
    integrand: Vec<f64>,
    copy_max: f64,
    log_ratio: Vec<f64>,
    grad_log_ratio: Vec<f64>,
}

fn slice_terms(bundle: &TrajectoryBundle, k: usize, want_ratio: bool) -> Result<SliceTerms> {
    let n = bundle.particles;
    let x = bundle.slice(k);
    let law = LawView::new(&bundle.snapshots[k]);
    for xi in &x {
        law.check(*xi)?;
    }
    let pot = &bundle.potentials;
    let v = &pot.confinement;
    let beta = pot.active_perturbation();
    let w_zero = pot.interaction.potential().is_zero();
    let inv = 1.0 / (n - 1) as f64;
    let kernel = PairKernel::new(&pot.interaction);

    let vgrad: Vec<f64> = x.iter().map(|x| v.grad_1d(*x)).collect();
    let lower: Vec<f64> = x.iter().zip(&vgrad).map(|(x, g)| law.score(*x) + g).collect();
    let bgrad: Vec<f64> = match beta {
        Some(b) => x.iter().map(|x| b.grad_1d(*x)).collect(),
        None => vec![0.0; n],
    };
    let mut inter = vec![0.0; n];
    let mut copy = vec![0.0; n];
    if !w_zero {
        kernel.gradient_sums(&x, None, &mut inter);
        inter.iter_mut().for_each(|g| *g *= inv);
        let g: Vec<f64> = (0..n).map(|j| 2.0 * lower[j] - vgrad[j] + inter[j] + bgrad[j]).collect();
        kernel.gradient_sums(&x, Some(&g), &mut copy);
        copy.iter_mut().for_each(|c| *c *= 0.5 * inv);
    }
    let integrand: Vec<f64> = (0..n)
        .map(|i| {
            let (l, g, b) = (lower[i], inter[i], bgrad[i]);
            let mut out = l * l + 0.5 * g * g + 0.5 * g * (2.0 * l + vgrad[i] + b) - copy[i];
            if let Some(beta) = beta {
                out += vgrad[i] * b - beta.laplacian_1d(x[i]);
            }
            out
        })
        .collect();
    let (log_ratio, grad_log_ratio) = if want_ratio {
        let mut wv = vec![0.0; n];
        if !w_zero {
            kernel.value_sums(&x, None, &mut wv);
        }
        (
            (0..n).map(|i| law.log_p(x[i]) + v.value_1d(x[i]) + 0.5 * inv * wv[i]).collect(),
            (0..n).map(|i| lower[i] + 0.5 * inter[i]).collect(),
        )
    } else {
        (vec![], vec![])
    };
    let copy_max = copy.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    Ok(SliceTerms { integrand, copy_max, log_ratio, grad_log_ratio })
}

/// Maps reversed-time index `j` to the bundle's record index.
fn record_index(bundle: &TrajectoryBundle, j: usize) -> usize {
    if bundle.reversed {
        j
    } else {
        bundle.records() - 1 - j
    }
}

fn reversed_times(bundle: &TrajectoryBundle) -> Vec<f64> {
    let t = bundle.physical_times();
    (0..bundle.records()).map(|j| bundle.mirror - t[record_index(bundle, j)]).collect()
}

/// Pathwise integrand and its running trapezoid integral on the reversed grid.
/// Arrays are particle-major, `N x K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherPath {
    pub s: Vec<f64>,
    pub particles: usize,
    pub integrand: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub mean_integrand: Vec<f64>,
    pub mean_path: Vec<f64>,
    pub std_err_path: Vec<f64>,
    pub mirror: f64,
    pub perturbed: bool,
    pub min_integrand: f64,
    /// Largest `|copy term|`; exactly zero without interaction.
    pub copy_term_max: f64,
}

impl FisherPath {
    pub fn records(&self) -> usize {
        self.s.len()
    }

    pub fn cumulative_of(&self, i: usize) -> &[f64] {
        let k = self.records();
        &self.cumulative[i * k..(i + 1) * k]
    }

    pub fn integrand_of(&self, i: usize) -> &[f64] {
        let k = self.records();
        &self.integrand[i * k..(i + 1) * k]
    }

    /// Record index nearest to reversed time `s`.
    pub fn index_near(&self, s: f64) -> usize {
        (0..self.records())
            .min_by(|a, b| (self.s[*a] - s).abs().total_cmp(&(self.s[*b] - s).abs()))
            .unwrap_or(0)
    }
}

fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Pathwise cumulative Fisher information of the time-reversed particles.
/// The perturbation, if any, is taken from the bundle's potentials.
pub fn fisher_process(bundle: &TrajectoryBundle) -> Result<FisherPath> {
    if bundle.dim != 1 {
        return Err(Error::Dimension(bundle.dim, "1"));
    }
    if bundle.snapshots.len() != bundle.records() {
        return Err(Error::MissingSnapshots("bundle carries no law at its record times".into()));
    }
    let (n, kk) = (bundle.particles, bundle.records());
    let s = reversed_times(bundle);
    let mut integrand = vec![0.0; n * kk];
    let mut copy_term_max: f64 = 0.0;
    for j in 0..kk {
        let terms = slice_terms(bundle, record_index(bundle, j), false)?;
        copy_term_max = copy_term_max.max(terms.copy_max);
        for i in 0..n {
            integrand[i * kk + j] = terms.integrand[i];
        }
    }
    let mut cumulative = vec![0.0; n * kk];
    for i in 0..n {
        let row = &integrand[i * kk..(i + 1) * kk];
        let out = &mut cumulative[i * kk..(i + 1) * kk];
        for j in 1..kk {
            out[j] = out[j - 1] + 0.5 * (s[j] - s[j - 1]) * (row[j] + row[j - 1]);
        }
    }
    let mut mean_integrand = vec![0.0; kk];
    let mut mean_path = vec![0.0; kk];
    let mut std_err_path = vec![0.0; kk];
    for j in 0..kk {
        mean_integrand[j] = mean_and_se((0..n).map(|i| integrand[i * kk + j])).0;
        let (m, se) = mean_and_se((0..n).map(|i| cumulative[i * kk + j]));
        mean_path[j] = m;
        std_err_path[j] = se;
    }
    let min_integrand = integrand.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(FisherPath {
        s,
        particles: n,
        integrand,
        cumulative,
        mean_integrand,
        mean_path,
        std_err_path,
        mirror: bundle.mirror,
        perturbed: bundle.potentials.active_perturbation().is_some(),
        min_integrand,
        copy_term_max,
    })
}

/// Mean of the martingale residual at one probe time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStat {
    pub s: f64,
    pub mean: f64,
    pub std_err: f64,
    pub t_stat: f64,
    /// Ensemble mean of `log lbar_s - log lbar_0`.
    pub mean_log_ratio_change: f64,
    pub log_ratio_std_err: f64,
}

/// Binned conditional means of a residual increment over `[s_from, s_to]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalIncrements {
    pub s_from: f64,
    pub s_to: f64,
    pub bin_t_stats: Vec<f64>,
    pub max_abs_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub probes: Vec<ProbeStat>,
    pub conditional: Vec<ConditionalIncrements>,
    pub realized_qv: f64,
    pub integrated_qv: f64,
    pub qv_ratio: f64,
}

/// Probe fractions of the reversed horizon.
pub const PROBE_FRACTIONS: [f64; 3] = [0.25, 0.5, 1.0];
/// Position-quantile bins used for the conditional-increment test.
pub const CONDITIONAL_BINS: usize = 10;

/// Residual `Mbar_s = (log lbar_s - log lbar_0) - Fbar_s` diagnostics.
pub fn martingale_report(bundle: &TrajectoryBundle, path: &FisherPath) -> Result<MartingaleReport> {
    let (n, kk) = (bundle.particles, bundle.records());
    if path.records() != kk || path.particles != n {
        return Err(Error::InvalidConfig("Fisher path does not match bundle".into()));
    }
    let s = &path.s;
    let span = s[kk - 1];
    let probe_idx: Vec<usize> = PROBE_FRACTIONS.iter().map(|f| path.index_near(f * span)).collect();

    let mut log0 = vec![0.0; n];
    let mut prev_m = vec![0.0; n];
    let mut prev_grad2 = vec![0.0; n];
    let mut realized = 0.0;
    let mut integrated = 0.0;
    // residual and position at the start of each conditional window
    let mut window_start: Vec<(usize, Vec<f64>, Vec<f64>)> = vec![];
    let starts: Vec<usize> = std::iter::once(0).chain(probe_idx.iter().cloned()).collect();
    let mut probes = vec![];
    let mut conditional = vec![];
    for j in 0..kk {
        let k = record_index(bundle, j);
        let terms = slice_terms(bundle, k, true)?;
        let x = bundle.slice(k);
        let mut m = vec![0.0; n];
        for i in 0..n {
            if j == 0 {
                log0[i] = terms.log_ratio[i];
            }
            m[i] = terms.log_ratio[i] - log0[i] - path.cumulative[i * kk + j];
            let g2 = terms.grad_log_ratio[i] * terms.grad_log_ratio[i];
            if j > 0 {
                let dm = m[i] - prev_m[i];
                realized += dm * dm;
                integrated += (s[j] - s[j - 1]) * (g2 + prev_grad2[i]);
            }
            prev_grad2[i] = g2;
        }
        if probe_idx.contains(&j) {
            let (mean, se) = mean_and_se(m.iter().cloned());
            let (dl, dl_se) = mean_and_se((0..n).map(|i| terms.log_ratio[i] - log0[i]));
            probes.push(ProbeStat {
                s: s[j],
                mean,
                std_err: se,
                t_stat: mean / se,
                mean_log_ratio_change: dl,
                log_ratio_std_err: dl_se,
            });
            if let Some((from, m0, x0)) = window_start.pop() {
                conditional.push(conditional_increments(&x0, &m0, &m, s[from], s[j]));
            }
        }
        if starts.contains(&j) && j + 1 < kk {
            window_start.push((j, m.clone(), x));
        }
        prev_m = m;
    }
    Ok(MartingaleReport {
        probes,
        conditional,
        realized_qv: realized,
        integrated_qv: integrated,
        qv_ratio: realized / integrated,
    })
}

fn conditional_increments(x0: &[f64], m0: &[f64], m1: &[f64], s_from: f64, s_to: f64) -> ConditionalIncrements {
    let n = x0.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| x0[*a].total_cmp(&x0[*b]).then(a.cmp(b)));
    let bins = CONDITIONAL_BINS.min(n);
    let t: Vec<f64> = (0..bins)
        .map(|b| {
            let lo = b * n / bins;
            let hi = (b + 1) * n / bins;
            let (mean, se) = mean_and_se(order[lo..hi].iter().map(|i| m1[*i] - m0[*i]));
            if se > 0.0 {
                mean / se
            } else {
                0.0
            }
        })
        .collect();
    ConditionalIncrements { s_from, s_to, max_abs_t: t.iter().fold(0.0, |a, b| a.max(b.abs())), bin_t_stats: t }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensatorProbe {
    pub s: f64,
    pub mean_cumulative: f64,
    pub std_err: f64,
    pub integral: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensatorCheck {
    pub probes: Vec<CompensatorProbe>,
    pub max_residual: f64,
    pub pass: bool,
}

/// Relative part of the compensator tolerance; the rest is three standard errors.
pub const COMPENSATOR_RELATIVE_TOL: f64 = 0.01;

/// Ensemble mean of `Fbar_s` against `int_0^s` of the grid dissipation rate.
pub fn compensator_expectation_check(path: &FisherPath, curve: &[PdeState]) -> Result<CompensatorCheck> {
    if curve.len() < 2 {
        return Err(Error::MissingSnapshots("need at least 2 grid snapshots".into()));
    }
    let mut pts: Vec<(f64, f64)> = curve
        .iter()
        .map(|st| {
            let (v, w) = (&st.potentials.confinement, &st.potentials.interaction);
            let mut rate = relative_fisher(&st.grid, v, w);
            if path.perturbed {
                if let Some(b) = st.potentials.active_perturbation() {
                    rate += perturbation_correction(&st.grid, v, w, b).0;
                }
            }
            (path.mirror - st.time, rate)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let u: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let r: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let cum = cumulative_trapezoid(&u, &r);
    let integral_at = |s: f64| -> f64 {
        if s <= u[0] {
            return 0.0;
        }
        let k = u.partition_point(|v| *v < s).min(u.len() - 1);
        let f = ((s - u[k - 1]) / (u[k] - u[k - 1])).clamp(0.0, 1.0);
        cum[k - 1] + f * (cum[k] - cum[k - 1])
    };
    let span = path.s[path.records() - 1];
    let mut probes = vec![];
    for frac in std::iter::once(0.0).chain(PROBE_FRACTIONS) {
        let j = path.index_near(frac * span);
        let s = path.s[j];
        let integral = integral_at(s);
        let mean = path.mean_path[j];
        let se = path.std_err_path[j];
        let diff = (mean - integral).abs();
        let tol = COMPENSATOR_RELATIVE_TOL * integral.abs() + 3.0 * se;
        probes.push(CompensatorProbe {
            s,
            mean_cumulative: mean,
            std_err: se,
            integral,
            difference: diff,
            tolerance: tol,
            pass: diff <= tol + 1e-15,
        });
    }
    Ok(CompensatorCheck {
        max_residual: probes.iter().map(|p| p.difference).fold(0.0, f64::max),
        pass: probes.iter().all(|p| p.pass),
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{gaussian_density_on_grid, GaussianState};
    use crate::mckv_sim::{simulate, InitialCondition, SimConfig};
    use crate::oracles::{ou_integrand, ou_variance};
    use crate::potentials::{CompactBump, Potentials};
    use approx::assert_relative_eq;

    fn gauss(m: f64, v: f64, lo: f64, hi: f64, cells: usize) -> GridDensity {
        gaussian_density_on_grid(&GaussianState::new(m, v).unwrap(), lo, hi, cells).unwrap()
    }

    #[test]
    fn free_energy_examples() {
        let flat = GridDensity::new(0.0, 1.0, vec![1.0; 100]).unwrap();
        let z = InteractionSpec::zero();
        let f = free_energy(&flat, &PotentialSpec::zero(), &z);
        assert!(f.total.abs() < 1e-14);
        assert!(relative_entropy(&flat, &PotentialSpec::zero(), &z, EntropyReference::VsLebesgue).abs() < 1e-14);

        let p = gauss(0.0, 1.0, -10.0, 10.0, 4096);
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let f = free_energy(&p, &v, &z);
        assert!((f.total + 0.5 * std::f64::consts::TAU.ln()).abs() < 1e-4);
        assert_eq!(f.total, f.internal_energy + f.potential_energy + f.interaction_energy);

        let p = gauss(0.0, 0.7, -10.0, 10.0, 2048);
        let w = InteractionSpec::quadratic(1.0).unwrap();
        let f = free_energy(&p, &PotentialSpec::zero(), &w);
        assert!((f.interaction_energy - 0.35).abs() < 1e-4);
        let h = relative_entropy(&p, &v, &w, EntropyReference::VsQ);
        assert!((h - free_energy(&p, &v, &w).total).abs() < 1e-10);
    }

    #[test]
    fn fisher_examples() {
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let z = InteractionSpec::zero();
        let p = gauss(0.0, 1.0, -10.0, 10.0, 2048);
        assert!(relative_fisher(&p, &v, &z) < 1e-6);
        let p = gauss(0.0, 0.1, -3.0, 3.0, 4096);
        let i = relative_fisher(&p, &v, &z);
        assert!((i - 8.1).abs() < 1e-3, "{i}");
    }

    #[test]
    fn correction_two_ways() {
        let pot = PotentialSpec::quadratic(1.0).unwrap();
        let w = InteractionSpec::quadratic(0.4).unwrap();
        let beta = PerturbationSpec::new(vec![CompactBump::windowed_gaussian(0.3, 0.2, 1.5, 0.4)]).unwrap();
        let p = gauss(0.1, 0.5, -7.0, 7.0, 4096);
        let (d, ibp) = perturbation_correction(&p, &pot, &w, &beta);
        assert!((d - ibp).abs() < 1e-6, "{d} vs {ibp}");
    }

    #[test]
    fn pathwise_integrand_linear_case_is_exact() {
        let n = 300;
        let g = GaussianState::new(0.0, 0.1).unwrap();
        let pot = Potentials::new(PotentialSpec::quadratic(1.0).unwrap(), InteractionSpec::zero());
        let init = InitialCondition::gaussian(g, n, 8).unwrap();
        let mut cfg = SimConfig::new(pot, n, 0.2, 0.01, 8);
        cfg.record_stride = 5;
        let b = simulate(&cfg, &init).unwrap();
        let path = fisher_process(&b).unwrap();
        for j in 0..path.records() {
            let t = b.mirror - path.s[j];
            let x = b.slice(b.records() - 1 - j);
            for i in 0..n {
                let exact = ou_integrand(x[i], ou_variance(t, 0.1));
                assert_relative_eq!(path.integrand_of(i)[j], exact, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
        assert_eq!(path.cumulative_of(0)[0], 0.0);
    }

    #[test]
    fn pathwise_integrand_interacting_case_matches_direct_sum() {
        let n = 200;
        let g = GaussianState::new(0.0, 0.1).unwrap();
        let pot = Potentials::new(PotentialSpec::zero(), InteractionSpec::quadratic(1.0).unwrap());
        let init = InitialCondition::gaussian(g, n, 3).unwrap();
        let mut cfg = SimConfig::new(pot, n, 0.1, 0.01, 3);
        cfg.record_stride = 5;
        let b = simulate(&cfg, &init).unwrap();
        let path = fisher_process(&b).unwrap();
        let inv = 1.0 / (n - 1) as f64;
        for j in 0..path.records() {
            let t = b.mirror - path.s[j];
            let var = crate::oracles::gaussian_variance(t, 0.1, 1.0);
            let x = b.slice(b.records() - 1 - j);
            let lower: Vec<f64> = x.iter().map(|x| -x / var).collect();
            let inter: Vec<f64> =
                (0..n).map(|i| (0..n).filter(|k| *k != i).map(|k| x[i] - x[k]).sum::<f64>() * inv).collect();
            for i in (0..n).step_by(7) {
                let copy: f64 = (0..n)
                    .filter(|k| *k != i)
                    .map(|k| 0.5 * (x[i] - x[k]) * (2.0 * lower[k] + inter[k]))
                    .sum::<f64>()
                    * inv;
                let (l, gi) = (lower[i], inter[i]);
                let direct = l * l + 0.5 * gi * gi + gi * l - copy;
                assert_relative_eq!(path.integrand_of(i)[j], direct, max_relative = 1e-9, epsilon = 1e-9);
            }
        }
    }
}
