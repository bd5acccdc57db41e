//! Interacting particle approximation of the McKean–Vlasov diffusion
//! `dX = -(grad V + grad beta + grad W * P_t)(X) dt + sqrt(2) dB`.
//!
//! The law `P_t` in the drift is replaced by the empirical measure of the
//! other particles. Paths and the Gaussian draws that produced them are kept,
//! together with the exact law (Gaussian closed form or a synchronized grid
//! solution) at every recorded time, so trajectory diagnostics can run on the
//! time-reversed process afterwards.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{
    default_gaussian_domain, gaussian_density_on_grid, sample_gaussian, sample_grid, GaussianState, GridDensity,
    ParticleEnsemble,
};
use crate::oracles::{gaussian_mean, gaussian_variance};
use crate::pde::solve_at_times;
use crate::potentials::{ensemble_interaction_gradient, Potentials};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    /// Exact transition for `V = k x^2/2`, `W = 0`.
    ExactOu,
    /// Exact transition for `V = 0`, `W = k x^2/2` given the frozen ensemble mean.
    ExactNl,
}

/// Where the law at each recorded time comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    AnalyticGaussian,
    GridPde,
    None,
}

/// Requested law source; `Auto` prefers the closed form when it applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreChoice {
    #[default]
    Auto,
    Grid,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub potentials: Potentials,
    /// Time at which the perturbation switches on.
    pub activation_time: f64,
    pub particles: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub record_stride: usize,
    /// Safety box half-width as a multiple of the initial one.
    pub divergence_factor: f64,
    pub score: ScoreChoice,
    /// Grid for the synchronized law; defaults around the initial law.
    pub grid: Option<GridSpec>,
    /// Fraction of the stable grid step used for the synchronized solve.
    pub grid_safety: f64,
}

impl SimConfig {
    pub fn new(potentials: Potentials, particles: usize, horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            potentials,
            activation_time: 0.0,
            particles,
            horizon,
            dt,
            seed,
            scheme: Scheme::EulerMaruyama,
            record_stride: 1,
            divergence_factor: 10.0,
            score: ScoreChoice::Auto,
            grid: None,
            grid_safety: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::InvalidConfig("need at least 2 particles".into()));
        }
        if !(self.dt > 0.0) || !(self.dt <= self.horizon) {
            return Err(Error::InvalidConfig(format!("need 0 < dt <= T, got dt = {}", self.dt)));
        }
        if !(0.0..=self.horizon).contains(&self.activation_time) {
            return Err(Error::InvalidConfig("activation time outside [0, T]".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be positive".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidConfig("divergence factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// The exact law at one recorded time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Snapshot {
    Gaussian(GaussianState),
    Grid(GridDensity),
}

/// Initial particles together with the law they were drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub law: Option<Snapshot>,
    pub particles: ParticleEnsemble,
}

impl InitialCondition {
    pub fn gaussian(g: GaussianState, n: usize, seed: u64) -> Result<Self> {
        Ok(Self { law: Some(Snapshot::Gaussian(g)), particles: sample_gaussian(&g, n, seed)? })
    }

    pub fn grid(p: GridDensity, n: usize, seed: u64) -> Result<Self> {
        let particles = sample_grid(&p, n, seed)?;
        Ok(Self { law: Some(Snapshot::Grid(p)), particles })
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.particles.time = t;
        self
    }
}

/// Recorded paths, noise and laws.
///
/// Arrays are particle-major: position `(i, k, d)` sits at `(i * K + k) * dim + d`.
/// `noise` holds, per recorded interval, the sum of the standard normal draws
/// of its steps (exactly the step draw when `record_stride = 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub dim: usize,
    pub particles: usize,
    /// Physical time of each record index.
    stamps: Vec<f64>,
    pub paths: Vec<f64>,
    pub noise: Vec<f64>,
    pub score_source: ScoreSource,
    pub snapshots: Vec<Snapshot>,
    pub potentials: Potentials,
    pub dt: f64,
    pub record_stride: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Time at which the run ends; reversed time is `mirror - t`.
    pub mirror: f64,
    pub reversed: bool,
    first_slot: u64,
}

impl TrajectoryBundle {
    pub fn records(&self) -> usize {
        self.stamps.len()
    }

    /// Time axis in the bundle's own direction (`s = T - t` when reversed).
    pub fn times(&self) -> Vec<f64> {
        if self.reversed {
            self.stamps.iter().map(|t| self.mirror - t).collect()
        } else {
            self.stamps.clone()
        }
    }

    /// Physical (forward) time of each record index.
    pub fn physical_times(&self) -> &[f64] {
        &self.stamps
    }

    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        let o = (i * self.records() + k) * self.dim;
        &self.paths[o..o + self.dim]
    }

    /// Path of one particle in one dimension.
    pub fn path_1d(&self, i: usize) -> &[f64] {
        let k = self.records();
        &self.paths[i * k..(i + 1) * k]
    }

    /// Positions of every particle at record `k`.
    pub fn slice(&self, k: usize) -> Vec<f64> {
        let kk = self.records();
        let mut out = Vec::with_capacity(self.particles * self.dim);
        for i in 0..self.particles {
            let o = (i * kk + k) * self.dim;
            out.extend_from_slice(&self.paths[o..o + self.dim]);
        }
        out
    }

    pub fn ensemble_at(&self, k: usize) -> Result<ParticleEnsemble> {
        ParticleEnsemble::new(self.dim, self.slice(k), self.stamps[k])
    }

    pub fn write_times_csv(&self, out: &mut impl Write, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "k,t")?;
        for (k, t) in self.times().iter().enumerate() {
            writeln!(out, "{k},{t}")?;
        }
        Ok(())
    }

    /// One row per particle (and coordinate), one column per record.
    pub fn write_paths_csv(&self, out: &mut impl Write, comments: &[String]) -> std::io::Result<()> {
        self.write_matrix(out, comments, &self.paths, self.records(), "x")
    }

    pub fn write_noise_csv(&self, out: &mut impl Write, comments: &[String]) -> std::io::Result<()> {
        let cols = self.records() - 1;
        self.write_matrix(out, comments, &self.noise, cols, "xi")
    }

    fn write_matrix(
        &self,
        out: &mut impl Write,
        comments: &[String],
        data: &[f64],
        cols: usize,
        prefix: &str,
    ) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        write!(out, "particle,coord")?;
        for k in 0..cols {
            write!(out, ",{prefix}{k}")?;
        }
        writeln!(out)?;
        for i in 0..self.particles {
            for d in 0..self.dim {
                write!(out, "{i},{d}")?;
                for k in 0..cols {
                    write!(out, ",{}", data[(i * cols + k) * self.dim + d])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// `x <- e^{-dt} x + sqrt(1 - e^{-2 dt}) xi`.
pub fn exact_ou_step(x: f64, dt: f64, xi: f64) -> f64 {
    (-dt).exp() * x + (1.0 - (-2.0 * dt).exp()).sqrt() * xi
}

/// Draw slot of coordinate `d` at step `k` (slots `0..dim` hold the initial draw).
#[inline]
fn step_slot(first_slot: u64, k: usize, dim: usize, d: usize) -> u64 {
    first_slot + (k * dim + d) as u64
}

struct Stepper<'a> {
    potentials: &'a Potentials,
    scheme: Scheme,
    dim: usize,
    kappa: f64,
}

impl<'a> Stepper<'a> {
    fn new(potentials: &'a Potentials, scheme: Scheme, dim: usize) -> Result<Self> {
        let kappa = match scheme {
            Scheme::EulerMaruyama => 0.0,
            Scheme::ExactOu => {
                let k = potentials.confinement.potential.pure_quadratic();
                match (k, potentials.interaction.potential().is_zero(), potentials.active_perturbation()) {
                    (Some(k), true, None) if k > 0.0 => k,
                    _ => return Err(Error::InvalidConfig("exact_ou needs V = k|x|^2/2, W = 0, no perturbation".into())),
                }
            }
            Scheme::ExactNl => {
                let k = potentials.interaction.potential().pure_quadratic();
                match (k, potentials.confinement.potential.is_zero(), potentials.active_perturbation()) {
                    (Some(k), true, None) if k > 0.0 => k,
                    _ => return Err(Error::InvalidConfig("exact_nl needs V = 0, W = k|x|^2/2, no perturbation".into())),
                }
            }
        };
        Ok(Self { potentials, scheme, dim, kappa })
    }

    /// One step of every particle, driven by the standard normals `xi`.
    fn advance(&self, x: &mut [f64], xi: &[f64], dt: f64, drift: &mut [f64]) -> Result<()> {
        let dim = self.dim;
        let n = x.len() / dim;
        match self.scheme {
            Scheme::EulerMaruyama => {
                let e = ParticleEnsemble::new(dim, x.to_vec(), 0.0)?;
                ensemble_interaction_gradient(&self.potentials.interaction, &e, drift);
                let scale = (2.0 * dt).sqrt();
                let pot = self.potentials;
                x.par_chunks_mut(dim)
                    .zip(drift.par_chunks(dim))
                    .zip(xi.par_chunks(dim))
                    .for_each(|((xp, gw), z)| {
                        let mut g = [0.0; 2];
                        if dim == 1 {
                            g[0] = pot.external_grad_1d(xp[0]);
                        } else {
                            pot.confinement.gradient(xp, &mut g[..dim]);
                            if let Some(b) = pot.active_perturbation() {
                                let mut gb = [0.0; 2];
                                b.gradient(xp, &mut gb[..dim]);
                                for d in 0..dim {
                                    g[d] += gb[d];
                                }
                            }
                        }
                        for d in 0..dim {
                            xp[d] += -(g[d] + gw[d]) * dt + scale * z[d];
                        }
                    });
            }
            Scheme::ExactOu | Scheme::ExactNl => {
                let k = self.kappa;
                let a = (-k * dt).exp();
                let s = ((1.0 - (-2.0 * k * dt).exp()) / k).sqrt();
                let mut sums = [0.0; 2];
                if self.scheme == Scheme::ExactNl {
                    for p in x.chunks(dim) {
                        for d in 0..dim {
                            sums[d] += p[d];
                        }
                    }
                }
                let nl = self.scheme == Scheme::ExactNl;
                x.par_chunks_mut(dim).zip(xi.par_chunks(dim)).for_each(|(xp, z)| {
                    for d in 0..dim {
                        // leave-one-out mean, matching the particle drift
                        let m = if nl { (sums[d] - xp[d]) / (n - 1) as f64 } else { 0.0 };
                        xp[d] = m + a * (xp[d] - m) + s * z[d];
                    }
                });
            }
        }
        Ok(())
    }
}

fn check_box(x: &[f64], dim: usize, half_width: f64, time: f64) -> Result<()> {
    for (i, p) in x.chunks(dim).enumerate() {
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(r <= half_width) {
            return Err(Error::Divergence { particle: i, time, magnitude: r });
        }
    }
    Ok(())
}

fn run(cfg: &SimConfig, potentials: &Potentials, init: &InitialCondition) -> Result<TrajectoryBundle> {
    cfg.validate()?;
    let e = &init.particles;
    let dim = e.dim();
    let n = e.len();
    if n != cfg.particles {
        return Err(Error::InvalidConfig(format!("{} particles supplied, {} configured", n, cfg.particles)));
    }
    let start = e.time;
    let span = cfg.horizon - start;
    let steps = (span / cfg.dt).round() as usize;
    if steps == 0 || ((steps as f64) * cfg.dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidConfig(format!("T - t0 = {span} is not a multiple of dt = {}", cfg.dt)));
    }
    if !steps.is_multiple_of(cfg.record_stride) {
        return Err(Error::InvalidConfig(format!("record_stride {} does not divide {steps} steps", cfg.record_stride)));
    }
    let records = steps / cfg.record_stride + 1;
    let stepper = Stepper::new(potentials, cfg.scheme, dim)?;
    let first_slot = dim as u64;

    let half_width = cfg.divergence_factor
        * e.positions
            .chunks(dim)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(1.0, f64::max);

    let mut x = e.positions.clone();
    let mut paths = vec![0.0; n * records * dim];
    let mut noise = vec![0.0; n * (records - 1) * dim];
    let mut acc = vec![0.0; n * dim];
    let mut xi = vec![0.0; n * dim];
    let mut drift = vec![0.0; n * dim];
    let mut streams: Vec<NoiseStream> = (0..n)
        .map(|i| NoiseStream::at(cfg.seed, i as u64, step_slot(first_slot, 0, dim, 0)))
        .collect();
    let record = |paths: &mut [f64], x: &[f64], k: usize| {
        for i in 0..n {
            let o = (i * records + k) * dim;
            paths[o..o + dim].copy_from_slice(&x[i * dim..(i + 1) * dim]);
        }
    };
    record(&mut paths, &x, 0);
    let mut stamps = Vec::with_capacity(records);
    stamps.push(start);
    for k in 0..steps {
        xi.par_chunks_mut(dim)
            .zip(streams.par_iter_mut())
            .for_each(|(z, s)| z.iter_mut().for_each(|v| *v = s.next_normal()));
        stepper.advance(&mut x, &xi, cfg.dt, &mut drift)?;
        for (a, z) in acc.iter_mut().zip(&xi) {
            *a += z;
        }
        let t = start + (k + 1) as f64 * cfg.dt;
        check_box(&x, dim, half_width, t)?;
        if (k + 1) % cfg.record_stride == 0 {
            let r = (k + 1) / cfg.record_stride;
            record(&mut paths, &x, r);
            for i in 0..n {
                let o = (i * (records - 1) + r - 1) * dim;
                noise[o..o + dim].copy_from_slice(&acc[i * dim..(i + 1) * dim]);
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            stamps.push(if r + 1 == records { cfg.horizon } else { t });
        }
    }

    let (score_source, snapshots) = laws(cfg, potentials, init, &stamps)?;
    Ok(TrajectoryBundle {
        dim,
        particles: n,
        stamps,
        paths,
        noise,
        score_source,
        snapshots,
        potentials: potentials.clone(),
        dt: cfg.dt,
        record_stride: cfg.record_stride,
        scheme: cfg.scheme,
        seed: cfg.seed,
        mirror: cfg.horizon,
        reversed: false,
        first_slot,
    })
}

fn laws(
    cfg: &SimConfig,
    potentials: &Potentials,
    init: &InitialCondition,
    stamps: &[f64],
) -> Result<(ScoreSource, Vec<Snapshot>)> {
    if init.particles.dim() != 1 || cfg.score == ScoreChoice::None {
        return Ok((ScoreSource::None, vec![]));
    }
    let start = stamps[0];
    match (&init.law, potentials.gaussian_closure(), cfg.score) {
        (Some(Snapshot::Gaussian(g)), Some((kv, kw)), ScoreChoice::Auto) => {
            let snaps = stamps
                .iter()
                .map(|t| {
                    Snapshot::Gaussian(GaussianState {
                        mean: gaussian_mean(t - start, g.mean, kv),
                        variance: gaussian_variance(t - start, g.variance, kv + kw),
                    })
                })
                .collect();
            Ok((ScoreSource::AnalyticGaussian, snaps))
        }
        (Some(law), _, _) => {
            let p0 = match law {
                Snapshot::Grid(p) => match cfg.grid {
                    Some(gs) if (gs.lo, gs.hi, gs.cells) != (p.lo, p.hi, p.cells()) => {
                        return Err(Error::InvalidConfig("initial grid differs from configured grid".into()))
                    }
                    _ => p.clone(),
                },
                Snapshot::Gaussian(g) => {
                    let gs = cfg.grid.unwrap_or_else(|| default_grid(g));
                    gaussian_density_on_grid(g, gs.lo, gs.hi, gs.cells)?
                }
            };
            let curve = solve_at_times(&p0, potentials, stamps, cfg.grid_safety)?;
            Ok((ScoreSource::GridPde, curve.into_iter().map(|s| Snapshot::Grid(s.grid)).collect()))
        }
        (None, _, _) => Ok((ScoreSource::None, vec![])),
    }
}

/// Grid used when none is configured: ten widths of the initial law (at least unit width).
pub fn default_grid(g: &GaussianState) -> GridSpec {
    let (lo, hi) = default_gaussian_domain(&GaussianState { mean: g.mean, variance: g.variance.max(1.0) * 1.5625 });
    GridSpec { lo, hi, cells: 1024 }
}

/// Unperturbed run from `init` (its time stamp is the start time).
pub fn simulate(cfg: &SimConfig, init: &InitialCondition) -> Result<TrajectoryBundle> {
    run(cfg, &cfg.potentials.unperturbed(), init)
}

/// Run with the perturbation switched on, starting at the activation time.
pub fn simulate_perturbed(cfg: &SimConfig, init_at_t0: &InitialCondition) -> Result<TrajectoryBundle> {
    if (init_at_t0.particles.time - cfg.activation_time).abs() > 1e-12 {
        return Err(Error::InvalidConfig("initial ensemble must be stamped at the activation time".into()));
    }
    run(cfg, &cfg.potentials, init_at_t0)
}

/// Reruns the stepping rule on the recorded noise and returns the paths.
/// Requires `record_stride = 1`, where the noise is the per-step draw.
pub fn replay(bundle: &TrajectoryBundle) -> Result<Vec<f64>> {
    if bundle.record_stride != 1 || bundle.reversed {
        return Err(Error::InvalidConfig("replay needs a forward bundle with record_stride = 1".into()));
    }
    let (n, dim, kk) = (bundle.particles, bundle.dim, bundle.records());
    let stepper = Stepper::new(&bundle.potentials, bundle.scheme, dim)?;
    let mut x = bundle.slice(0);
    let mut out = vec![0.0; bundle.paths.len()];
    let mut xi = vec![0.0; n * dim];
    let mut drift = vec![0.0; n * dim];
    for i in 0..n {
        out[i * kk * dim..i * kk * dim + dim].copy_from_slice(&x[i * dim..(i + 1) * dim]);
    }
    for k in 0..kk - 1 {
        for i in 0..n {
            let o = (i * (kk - 1) + k) * dim;
            xi[i * dim..(i + 1) * dim].copy_from_slice(&bundle.noise[o..o + dim]);
        }
        stepper.advance(&mut x, &xi, bundle.dt, &mut drift)?;
        for i in 0..n {
            let o = (i * kk + k + 1) * dim;
            out[o..o + dim].copy_from_slice(&x[i * dim..(i + 1) * dim]);
        }
    }
    Ok(out)
}

/// Re-indexes a bundle backwards in time: record `k` becomes `K - 1 - k`.
pub fn time_reverse(bundle: &TrajectoryBundle) -> TrajectoryBundle {
    let (n, dim, kk) = (bundle.particles, bundle.dim, bundle.records());
    let mut paths = vec![0.0; bundle.paths.len()];
    let mut noise = vec![0.0; bundle.noise.len()];
    for i in 0..n {
        for k in 0..kk {
            let (src, dst) = ((i * kk + k) * dim, (i * kk + kk - 1 - k) * dim);
            paths[dst..dst + dim].copy_from_slice(&bundle.paths[src..src + dim]);
        }
        for k in 0..kk - 1 {
            let (src, dst) = ((i * (kk - 1) + k) * dim, (i * (kk - 1) + kk - 2 - k) * dim);
            noise[dst..dst + dim].copy_from_slice(&bundle.noise[src..src + dim]);
        }
    }
    let mut stamps = bundle.stamps.clone();
    stamps.reverse();
    let mut snapshots = bundle.snapshots.clone();
    snapshots.reverse();
    TrajectoryBundle {
        dim,
        particles: n,
        stamps,
        paths,
        noise,
        score_source: bundle.score_source,
        snapshots,
        potentials: bundle.potentials.clone(),
        dt: bundle.dt,
        record_stride: bundle.record_stride,
        scheme: bundle.scheme,
        seed: bundle.seed,
        mirror: bundle.mirror,
        reversed: !bundle.reversed,
        first_slot: bundle.first_slot,
    }
}
