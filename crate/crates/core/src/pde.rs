//! Finite-volume solver for the nonlinear Fokker–Planck (granular media) equation
//! `dp/dt = d/dx (dp/dx + p d/dx(V + beta + W*p))` on a bounded interval.
//!
//! Fluxes use Scharfetter–Gummel / Chang–Cooper exponential fitting, so the
//! discrete Gibbs state of a frozen potential is an exact steady state and
//! cell values stay nonnegative under the explicit stability bound.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::GridDensity;
use crate::potentials::{InteractionSpec, Potential, Potentials};

/// Safety factor in the explicit time-step bound.
pub const STABILITY_FACTOR: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeState {
    pub grid: GridDensity,
    pub time: f64,
    pub potentials: Potentials,
}

impl PdeState {
    pub fn new(grid: GridDensity, time: f64, potentials: Potentials) -> Self {
        Self { grid, time, potentials }
    }

    /// All pointwise fields derived from this state.
    pub fn fields(&self) -> GridFields {
        GridFields::new(&self.grid, &self.potentials)
    }

    /// `d/dx log p` at `x`.
    pub fn score(&self, x: f64) -> Result<f64> {
        let s = score_field(&self.grid);
        interpolate(&self.grid, &s, x)
    }
}

/// `(W*p)` and `d/dx (W*p)` at cell midpoints by midpoint quadrature.
///
/// The polynomial part of `W` is expanded through the grid's moments; bumps are
/// handled by an FFT Toeplitz product with a cached kernel spectrum.
pub struct GridConvolver {
    w: Potential,
    cells: usize,
    dx: f64,
    x: Vec<f64>,
    bumps: Option<BumpKernels>,
}

struct BumpKernels {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    value_hat: Vec<Complex<f64>>,
    grad_hat: Vec<Complex<f64>>,
}

impl GridConvolver {
    pub fn new(w: &InteractionSpec, lo: f64, hi: f64, cells: usize) -> Self {
        let dx = (hi - lo) / cells as f64;
        let x: Vec<f64> = (0..cells).map(|i| lo + (i as f64 + 0.5) * dx).collect();
        let wp = w.potential().clone();
        let bumps = if wp.has_bumps() {
            let only = Potential::polynomial_bumps(vec![], wp.bumps.clone());
            let size = (2 * cells).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(size);
            let inverse = planner.plan_fft_inverse(size);
            // kernel sampled at offsets d dx, d in (-(M-1))..(M-1), wrapped
            let mut kv = vec![Complex::new(0.0, 0.0); size];
            let mut kg = vec![Complex::new(0.0, 0.0); size];
            for d in -(cells as i64 - 1)..=(cells as i64 - 1) {
                let z = d as f64 * dx;
                let idx = d.rem_euclid(size as i64) as usize;
                kv[idx] = Complex::new(only.value_1d(z), 0.0);
                kg[idx] = Complex::new(only.grad_1d(z), 0.0);
            }
            forward.process(&mut kv);
            forward.process(&mut kg);
            Some(BumpKernels { size, forward, inverse, value_hat: kv, grad_hat: kg })
        } else {
            None
        };
        Self { w: wp, cells, dx, x, bumps }
    }

    /// Raw grid moments `sum_j x_j^r p_j dx` for `r <= deg`.
    fn moments(&self, p: &[f64], deg: usize) -> Vec<f64> {
        let mut m = vec![0.0; deg + 1];
        for (xj, pj) in self.x.iter().zip(p) {
            let mut t = pj * self.dx;
            for mr in m.iter_mut() {
                *mr += t;
                t *= xj;
            }
        }
        m
    }

    /// Writes `(W*p)(x_i)` into `value` and its derivative into `grad` (either optional).
    pub fn apply(&self, p: &[f64], value: Option<&mut [f64]>, grad: Option<&mut [f64]>) {
        let deg = self.w.degree().unwrap_or(0);
        let m = self.moments(p, deg);
        let binom = binomials(deg);
        // (W*p)(x) = sum_k c_k sum_r C(k,r) x^(k-r) (-1)^r m_r
        let coeff_at = |x: f64, c: &[f64]| -> f64 {
            let mut total = 0.0;
            for (k, ck) in c.iter().enumerate() {
                if *ck == 0.0 {
                    continue;
                }
                let mut t = 0.0;
                for r in 0..=k {
                    let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                    t += binom[k][r] * x.powi((k - r) as i32) * sign * m[r];
                }
                total += ck * t;
            }
            total
        };
        let dc: Vec<f64> = (1..self.w.poly.len()).map(|k| k as f64 * self.w.poly[k]).collect();
        let spectrum = self.bumps.as_ref().map(|b| {
            let mut ph = vec![Complex::new(0.0, 0.0); b.size];
            for (j, pj) in p.iter().enumerate() {
                ph[j] = Complex::new(pj * self.dx, 0.0);
            }
            b.forward.process(&mut ph);
            ph
        });
        let bump_conv = |hat: &[Complex<f64>]| -> Vec<f64> {
            let b = self.bumps.as_ref().unwrap();
            let ph = spectrum.as_ref().unwrap();
            let mut prod: Vec<Complex<f64>> = ph.iter().zip(hat).map(|(a, k)| a * k).collect();
            b.inverse.process(&mut prod);
            let scale = 1.0 / b.size as f64;
            prod[..self.cells].iter().map(|c| c.re * scale).collect()
        };
        if let Some(out) = value {
            for (o, x) in out.iter_mut().zip(&self.x) {
                *o = coeff_at(*x, &self.w.poly);
            }
            if let Some(b) = &self.bumps {
                for (o, v) in out.iter_mut().zip(bump_conv(&b.value_hat)) {
                    *o += v;
                }
            }
        }
        if let Some(out) = grad {
            for (o, x) in out.iter_mut().zip(&self.x) {
                *o = coeff_at(*x, &dc);
            }
            if let Some(b) = &self.bumps {
                for (o, v) in out.iter_mut().zip(bump_conv(&b.grad_hat)) {
                    *o += v;
                }
            }
        }
    }
}

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n + 1]; n + 1];
    for m in 0..=n {
        c[m][0] = 1.0;
        for r in 1..=m {
            c[m][r] = c[m - 1][r - 1] + if r < m { c[m - 1][r] } else { 0.0 };
        }
    }
    c
}

/// `B(w) = w / (e^w - 1)`, given `w` and `e^w`.
#[inline]
fn bernoulli(w: f64, ew: f64) -> f64 {
    if w.abs() < 1e-5 {
        1.0 - 0.5 * w + w * w / 12.0
    } else {
        w / (ew - 1.0)
    }
}

/// Time stepper with potential-dependent data precomputed for one grid.
pub struct PdeSolver {
    pub potentials: Potentials,
    lo: f64,
    hi: f64,
    cells: usize,
    dx: f64,
    /// `V + beta` at midpoints.
    static_psi: Vec<f64>,
    /// Face differences of the frozen part of the potential.
    static_w: Vec<f64>,
    /// `exp(static_w)` when the interaction collapses to a mean shift.
    static_exp: Option<Vec<f64>>,
    /// `c2` of `W = c0 + c2 x^2`.
    quad_w: Option<f64>,
    conv: Option<GridConvolver>,
}

impl PdeSolver {
    pub fn new(potentials: &Potentials, lo: f64, hi: f64, cells: usize) -> Self {
        let dx = (hi - lo) / cells as f64;
        let x: Vec<f64> = (0..cells).map(|i| lo + (i as f64 + 0.5) * dx).collect();
        let beta = potentials.active_perturbation();
        let static_psi: Vec<f64> = x
            .iter()
            .map(|x| potentials.confinement.value_1d(*x) + beta.map_or(0.0, |b| b.value_1d(*x)))
            .collect();
        let wp = potentials.interaction.potential();
        let quad_w = match wp.degree() {
            _ if wp.has_bumps() => None,
            None | Some(0) => Some(0.0),
            Some(2) if wp.poly.get(1).copied().unwrap_or(0.0) == 0.0 => Some(wp.poly[2]),
            _ => None,
        };
        let mut static_w: Vec<f64> = static_psi.windows(2).map(|w| w[1] - w[0]).collect();
        let static_exp = quad_w.map(|c2| {
            for (f, sw) in static_w.iter_mut().enumerate() {
                *sw += c2 * (x[f + 1] * x[f + 1] - x[f] * x[f]);
            }
            static_w.iter().map(|w| w.exp()).collect()
        });
        let conv = if quad_w.is_none() {
            Some(GridConvolver::new(&potentials.interaction, lo, hi, cells))
        } else {
            None
        };
        Self {
            potentials: potentials.clone(),
            lo,
            hi,
            cells,
            dx,
            static_psi,
            static_w,
            static_exp,
            quad_w,
            conv,
        }
    }

    pub fn for_grid(potentials: &Potentials, grid: &GridDensity) -> Self {
        Self::new(potentials, grid.lo, grid.hi, grid.cells())
    }

    fn check_grid(&self, grid: &GridDensity) -> Result<()> {
        if grid.cells() != self.cells || grid.lo != self.lo || grid.hi != self.hi {
            return Err(Error::InvalidMeasure("grid does not match solver".into()));
        }
        Ok(())
    }

    /// Face potential differences `w_f = Psi_{f+1} - Psi_f` and `exp(w_f)`.
    fn face_exponents(&self, p: &[f64], w: &mut [f64], ew: &mut [f64]) {
        if let (Some(c2), Some(es)) = (self.quad_w, &self.static_exp) {
            let mean: f64 = p
                .iter()
                .enumerate()
                .map(|(i, pi)| (self.lo + (i as f64 + 0.5) * self.dx) * pi)
                .sum::<f64>()
                * self.dx;
            let shift = -2.0 * c2 * mean * self.dx;
            let es_shift = shift.exp();
            for f in 0..self.cells - 1 {
                w[f] = self.static_w[f] + shift;
                ew[f] = es[f] * es_shift;
            }
        } else {
            let mut conv = vec![0.0; self.cells];
            self.conv.as_ref().unwrap().apply(p, Some(&mut conv), None);
            for f in 0..self.cells - 1 {
                w[f] = self.static_w[f] + conv[f + 1] - conv[f];
                ew[f] = w[f].exp();
            }
        }
    }

    /// Largest stable step for the current density.
    pub fn admissible_dt(&self, p: &[f64]) -> f64 {
        let mut w = vec![0.0; self.cells - 1];
        let mut ew = vec![0.0; self.cells - 1];
        self.face_exponents(p, &mut w, &mut ew);
        let max_w = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        STABILITY_FACTOR * self.dx * self.dx / (2.0 + max_w)
    }

    /// One explicit step in place.
    pub fn step_in_place(&self, p: &mut [f64], dt: f64, scratch: &mut StepScratch) -> Result<()> {
        let m = self.cells;
        scratch.resize(m);
        let StepScratch { w, ew, flux } = scratch;
        self.face_exponents(p, w, ew);
        let max_w = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let admissible = STABILITY_FACTOR * self.dx * self.dx / (2.0 + max_w);
        if dt > admissible * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, admissible });
        }
        let inv_dx = 1.0 / self.dx;
        for f in 0..m - 1 {
            flux[f] = bernoulli(w[f], ew[f]) * inv_dx * (ew[f] * p[f + 1] - p[f]);
        }
        let c = dt * inv_dx;
        p[0] += c * flux[0];
        for i in 1..m - 1 {
            p[i] += c * (flux[i] - flux[i - 1]);
        }
        p[m - 1] -= c * flux[m - 2];
        Ok(())
    }

    pub fn step(&self, state: &PdeState, dt: f64) -> Result<PdeState> {
        self.check_grid(&state.grid)?;
        let mut p = state.grid.values().to_vec();
        self.step_in_place(&mut p, dt, &mut StepScratch::default())?;
        Ok(PdeState {
            grid: GridDensity::from_normalized(self.lo, self.hi, p),
            time: state.time + dt,
            potentials: state.potentials.clone(),
        })
    }

    /// Advances by `duration` in `n` equal substeps.
    pub fn advance(&self, p: &mut [f64], duration: f64, n: usize, scratch: &mut StepScratch) -> Result<()> {
        let dt = duration / n as f64;
        for _ in 0..n {
            self.step_in_place(p, dt, scratch)?;
        }
        Ok(())
    }

    /// `V + beta` at the midpoints.
    pub fn static_potential(&self) -> &[f64] {
        &self.static_psi
    }
}

#[derive(Default)]
pub struct StepScratch {
    w: Vec<f64>,
    ew: Vec<f64>,
    flux: Vec<f64>,
}

impl StepScratch {
    fn resize(&mut self, cells: usize) {
        if self.w.len() != cells - 1 {
            self.w = vec![0.0; cells - 1];
            self.ew = vec![0.0; cells - 1];
            self.flux = vec![0.0; cells - 1];
        }
    }
}

/// One step of the unperturbed equation (any perturbation in `state` is ignored).
pub fn step(state: &PdeState, dt: f64) -> Result<PdeState> {
    let st = PdeState { potentials: state.potentials.unperturbed(), ..state.clone() };
    let out = PdeSolver::for_grid(&st.potentials, &st.grid).step(&st, dt)?;
    Ok(PdeState { potentials: state.potentials.clone(), ..out })
}

/// One step with `V` replaced by `V + beta`.
pub fn step_perturbed(state: &PdeState, dt: f64) -> Result<PdeState> {
    PdeSolver::for_grid(&state.potentials, &state.grid).step(state, dt)
}

/// Runs `ceil(T/dt)` steps (the last one shortened if needed), keeping every
/// `snapshot_stride`-th state plus the final one.
pub fn solve_curve(
    initial: &GridDensity,
    potentials: &Potentials,
    horizon: f64,
    dt: f64,
    snapshot_stride: usize,
) -> Result<Vec<PdeState>> {
    if !(dt > 0.0) || horizon < 0.0 || snapshot_stride == 0 {
        return Err(Error::InvalidConfig("need dt > 0, T >= 0 and a positive stride".into()));
    }
    let solver = PdeSolver::for_grid(potentials, initial);
    let mut out = vec![PdeState::new(initial.clone(), 0.0, potentials.clone())];
    let steps = if horizon == 0.0 { 0 } else { (horizon / dt - 1e-9).ceil() as usize };
    let mut p = initial.values().to_vec();
    let mut scratch = StepScratch::default();
    let mut t = 0.0;
    for k in 0..steps {
        let h = if k + 1 == steps { horizon - k as f64 * dt } else { dt };
        solver.step_in_place(&mut p, h, &mut scratch)?;
        t = if k + 1 == steps { horizon } else { (k + 1) as f64 * dt };
        if (k + 1) % snapshot_stride == 0 || k + 1 == steps {
            out.push(PdeState::new(
                GridDensity::from_normalized(initial.lo, initial.hi, p.clone()),
                t,
                potentials.clone(),
            ));
        }
    }
    debug_assert!(steps == 0 || t == horizon);
    Ok(out)
}

/// Snapshots at `times` (starting at `times[0]`), substepping each interval
/// with the largest stable step scaled by `safety`.
pub fn solve_at_times(
    initial: &GridDensity,
    potentials: &Potentials,
    times: &[f64],
    safety: f64,
) -> Result<Vec<PdeState>> {
    let solver = PdeSolver::for_grid(potentials, initial);
    let mut p = initial.values().to_vec();
    let mut scratch = StepScratch::default();
    let mut out = Vec::with_capacity(times.len());
    out.push(PdeState::new(initial.clone(), times[0], potentials.clone()));
    for k in 1..times.len() {
        let span = times[k] - times[k - 1];
        let n = (span / (safety * solver.admissible_dt(&p))).ceil().max(1.0) as usize;
        solver.advance(&mut p, span, n, &mut scratch)?;
        out.push(PdeState::new(
            GridDensity::from_normalized(initial.lo, initial.hi, p.clone()),
            times[k],
            potentials.clone(),
        ));
    }
    Ok(out)
}

/// `d/dx log p` at each midpoint from floored log cell values: fourth-order
/// central differences in the interior, second order next to the boundary.
pub fn score_field(grid: &GridDensity) -> Vec<f64> {
    let l = grid.log_values();
    let m = l.len();
    let dx = grid.dx();
    let mut s = vec![0.0; m];
    for i in 0..m {
        s[i] = if i >= 2 && i + 2 < m {
            (l[i - 2] - 8.0 * l[i - 1] + 8.0 * l[i + 1] - l[i + 2]) / (12.0 * dx)
        } else if i >= 1 && i + 1 < m {
            (l[i + 1] - l[i - 1]) / (2.0 * dx)
        } else if i == 0 {
            (-3.0 * l[0] + 4.0 * l[1] - l[2]) / (2.0 * dx)
        } else {
            (3.0 * l[m - 1] - 4.0 * l[m - 2] + l[m - 3]) / (2.0 * dx)
        };
    }
    s
}

/// Linear interpolation of a midpoint field; constant beyond the outer midpoints.
pub fn interpolate(grid: &GridDensity, field: &[f64], x: f64) -> Result<f64> {
    if !grid.contains(x) {
        return Err(Error::OutOfDomain { x, lo: grid.lo, hi: grid.hi });
    }
    Ok(interpolate_unchecked(grid.lo, grid.dx(), field, x))
}

#[inline]
pub(crate) fn interpolate_unchecked(lo: f64, dx: f64, field: &[f64], x: f64) -> f64 {
    let t = (x - lo) / dx - 0.5;
    let m = field.len();
    if t <= 0.0 {
        return field[0];
    }
    let k = t.floor() as usize;
    if k >= m - 1 {
        return field[m - 1];
    }
    let f = t - k as f64;
    field[k] * (1.0 - f) + field[k + 1] * f
}

/// Pointwise fields of a grid state at its midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFields {
    pub x: Vec<f64>,
    /// Cell masses `p_i dx`.
    pub weights: Vec<f64>,
    pub log_p: Vec<f64>,
    pub score: Vec<f64>,
    pub interaction_value: Vec<f64>,
    pub interaction_grad: Vec<f64>,
    /// `score + V' + (W*p)'`, without the perturbation.
    pub relative_score: Vec<f64>,
    pub perturbation_grad: Vec<f64>,
}

impl GridFields {
    pub fn new(grid: &GridDensity, potentials: &Potentials) -> Self {
        let m = grid.cells();
        let x = grid.midpoints();
        let dx = grid.dx();
        let conv = GridConvolver::new(&potentials.interaction, grid.lo, grid.hi, m);
        let mut iv = vec![0.0; m];
        let mut ig = vec![0.0; m];
        conv.apply(grid.values(), Some(&mut iv), Some(&mut ig));
        let score = score_field(grid);
        let relative_score = (0..m)
            .map(|i| score[i] + potentials.confinement.grad_1d(x[i]) + ig[i])
            .collect();
        let perturbation_grad = match potentials.active_perturbation() {
            Some(b) => x.iter().map(|x| b.grad_1d(*x)).collect(),
            None => vec![0.0; m],
        };
        Self {
            weights: grid.values().iter().map(|v| v * dx).collect(),
            log_p: grid.log_values(),
            x,
            score,
            interaction_value: iv,
            interaction_grad: ig,
            relative_score,
            perturbation_grad,
        }
    }

    /// `(v_i, w_i)` where `-v` is the velocity field including the perturbation.
    pub fn iter_velocity(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.x.len()).map(|i| (self.relative_score[i] + self.perturbation_grad[i], self.weights[i]))
    }
}

/// Writes `x_mid,density,score` rows.
pub fn write_snapshot_csv(out: &mut impl std::io::Write, state: &PdeState, comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "# time,{}", state.time)?;
    writeln!(out, "x_mid,density,score")?;
    let s = score_field(&state.grid);
    for i in 0..state.grid.cells() {
        writeln!(out, "{},{},{}", state.grid.midpoint(i), state.grid.values()[i], s[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{barycenter, gaussian_density_on_grid, second_moment, GaussianState};
    use crate::oracles::ou_variance;
    use crate::potentials::{CompactBump, GaussianBump, PerturbationSpec, PotentialSpec};
    use approx::assert_relative_eq;

    fn ou() -> Potentials {
        Potentials::new(PotentialSpec::quadratic(1.0).unwrap(), InteractionSpec::zero())
    }

    fn nl() -> Potentials {
        Potentials::new(PotentialSpec::zero(), InteractionSpec::quadratic(1.0).unwrap())
    }

    fn variance(g: &GridDensity) -> f64 {
        second_moment(g) - barycenter(g)[0].powi(2)
    }

    #[test]
    fn stationary_gibbs_state() {
        let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 1.0).unwrap(), -8.0, 8.0, 2048).unwrap();
        let pot = ou();
        let solver = PdeSolver::for_grid(&pot, &p0);
        let dt = solver.admissible_dt(p0.values());
        let curve = solve_curve(&p0, &pot, 0.05, dt, 1000).unwrap();
        let last = curve.last().unwrap();
        let rate = last.grid.l1_distance(&p0).unwrap() / 0.05;
        assert!(rate < 1e-4, "{rate}");
        assert!((last.grid.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_and_interacting_variance() {
        for pot in [ou(), nl()] {
            let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 0.1).unwrap(), -4.0, 4.0, 512).unwrap();
            let times: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
            let curve = solve_at_times(&p0, &pot, &times, 0.9).unwrap();
            for s in &curve {
                assert!((variance(&s.grid) - ou_variance(s.time, 0.1)).abs() < 1e-3);
                assert!((s.grid.mass() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stability_violation_names_admissible_dt() {
        let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 1.0).unwrap(), -8.0, 8.0, 256).unwrap();
        let st = PdeState::new(p0, 0.0, ou());
        match step(&st, 1.0) {
            Err(Error::Stability { admissible, .. }) => assert!(admissible > 0.0 && admissible < 1e-3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_steps_and_monotone_times() {
        let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 1.0).unwrap(), -8.0, 8.0, 128).unwrap();
        let c = solve_curve(&p0, &ou(), 0.0, 1e-4, 3).unwrap();
        assert_eq!(c.len(), 1);
        let c = solve_curve(&p0, &ou(), 0.01, 1e-4, 7).unwrap();
        assert!(c.windows(2).all(|w| w[1].time > w[0].time));
        assert_eq!(c.last().unwrap().time, 0.01);
    }

    #[test]
    fn score_examples() {
        let v = 0.5;
        let g = gaussian_density_on_grid(&GaussianState::new(0.0, v).unwrap(), -6.0, 6.0, 4096).unwrap();
        let st = PdeState::new(g, 0.0, ou());
        for k in 0..=80 {
            let x = -4.0 * v.sqrt() + k as f64 * 0.1 * v.sqrt();
            let s = st.score(x).unwrap();
            let exact = -x / v;
            assert!((s - exact).abs() <= 1e-3 * exact.abs().max(1e-3), "x = {x}: {s} vs {exact}");
        }
        assert!(st.score(0.0).unwrap().abs() < 1e-8);
        assert!(st.score(7.0).is_err());
        let flat = GridDensity::new(0.0, 1.0, vec![1.0; 64]).unwrap();
        let st = PdeState::new(flat, 0.0, ou());
        assert!(st.score(0.4).unwrap().abs() < 1e-12);
    }

    #[test]
    fn perturbation_free_step_matches() {
        let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 0.3).unwrap(), -5.0, 5.0, 256).unwrap();
        let pot = ou().with_perturbation(PerturbationSpec::none());
        let st = PdeState::new(p0, 0.0, pot);
        let a = step(&st, 1e-5).unwrap();
        let b = step_perturbed(&st, 1e-5).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn far_perturbation_is_invisible() {
        let p0 = gaussian_density_on_grid(&GaussianState::new(0.0, 0.1).unwrap(), -10.0, 10.0, 512).unwrap();
        let beta = PerturbationSpec::new(vec![CompactBump::mollifier(1.0, 9.0, 0.5)]).unwrap();
        let a = solve_curve(&p0, &ou(), 0.1, 1e-4, 1000).unwrap();
        let b = solve_curve(&p0, &ou().with_perturbation(beta), 0.1, 1e-4, 1000).unwrap();
        let d = a.last().unwrap().grid.l1_distance(&b.last().unwrap().grid).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let w = InteractionSpec::new(Potential::polynomial_bumps(
            vec![0.0, 0.0, 0.3],
            vec![GaussianBump { amplitude: 0.7, center: 0.0, width: 0.6 }],
        ))
        .unwrap();
        let g = gaussian_density_on_grid(&GaussianState::new(0.4, 0.7).unwrap(), -7.0, 7.0, 300).unwrap();
        let conv = GridConvolver::new(&w, g.lo, g.hi, g.cells());
        let mut v = vec![0.0; 300];
        let mut d = vec![0.0; 300];
        conv.apply(g.values(), Some(&mut v), Some(&mut d));
        for i in (0..300).step_by(17) {
            let xi = g.midpoint(i);
            let mut sv = 0.0;
            let mut sd = 0.0;
            for j in 0..300 {
                let z = xi - g.midpoint(j);
                sv += w.value_1d(z) * g.values()[j] * g.dx();
                sd += w.grad_1d(z) * g.values()[j] * g.dx();
            }
            assert_relative_eq!(v[i], sv, epsilon = 1e-12, max_relative = 1e-11);
            assert_relative_eq!(d[i], sd, epsilon = 1e-12, max_relative = 1e-11);
        }
    }
}
