//! One-dimensional optimal transport through quantile functions.
//!
//! A measure on the line is represented by its quantile function, stored as
//! pieces that are linear in the probability level `u`. Grid densities give
//! one linear piece per occupied cell and point masses give flat pieces, so
//! every quantity below is computed exactly in quantile arithmetic: distances,
//! monotone maps, and McCann interpolants (themselves piecewise uniform).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, GridDensity, ParticleEnsemble};
use crate::pde::PdeState;
use crate::potentials::{PerturbationSpec, Potentials};

/// Quantile function restricted to `[u0, u1]`, linear from `x0` to `x1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePiece {
    pub u0: f64,
    pub u1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl QuantilePiece {
    #[inline]
    fn at(&self, u: f64) -> f64 {
        if self.u1 == self.u0 {
            return self.x0;
        }
        let f = (u - self.u0) / (self.u1 - self.u0);
        self.x0 + f * (self.x1 - self.x0)
    }

    #[inline]
    fn slope(&self) -> f64 {
        if self.u1 == self.u0 {
            0.0
        } else {
            (self.x1 - self.x0) / (self.u1 - self.u0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileFunction {
    pub pieces: Vec<QuantilePiece>,
}

/// Measures that expose a one-dimensional quantile function.
pub trait Quantiles {
    fn quantiles(&self) -> Result<QuantileFunction>;
}

impl Quantiles for GridDensity {
    fn quantiles(&self) -> Result<QuantileFunction> {
        let dx = self.dx();
        let total: f64 = self.values().iter().sum();
        let mut pieces = Vec::with_capacity(self.cells());
        let mut acc = 0.0;
        for (i, v) in self.values().iter().enumerate() {
            if *v <= 0.0 {
                continue;
            }
            let u0 = acc / total;
            acc += v;
            let a = self.lo + i as f64 * dx;
            pieces.push(QuantilePiece { u0, u1: acc / total, x0: a, x1: a + dx });
        }
        if let Some(last) = pieces.last_mut() {
            last.u1 = 1.0;
        }
        Ok(QuantileFunction { pieces })
    }
}

impl Quantiles for ParticleEnsemble {
    fn quantiles(&self) -> Result<QuantileFunction> {
        if self.dim() != 1 {
            return Err(Error::Dimension(self.dim(), "1"));
        }
        let mut xs = self.positions.clone();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        Ok(QuantileFunction {
            pieces: xs
                .iter()
                .enumerate()
                .map(|(i, x)| QuantilePiece {
                    u0: i as f64 / n,
                    u1: if i + 1 == xs.len() { 1.0 } else { (i + 1) as f64 / n },
                    x0: *x,
                    x1: *x,
                })
                .collect(),
        })
    }
}

impl Quantiles for QuantileFunction {
    fn quantiles(&self) -> Result<QuantileFunction> {
        Ok(self.clone())
    }
}

impl Quantiles for PiecewiseUniform {
    fn quantiles(&self) -> Result<QuantileFunction> {
        let total: f64 = self.pieces.iter().map(|p| p.mass).sum();
        let mut acc = 0.0;
        let mut pieces: Vec<QuantilePiece> = self
            .pieces
            .iter()
            .map(|p| {
                let u0 = acc / total;
                acc += p.mass;
                QuantilePiece { u0, u1: acc / total, x0: p.a, x1: p.b }
            })
            .collect();
        if let Some(last) = pieces.last_mut() {
            last.u1 = 1.0;
        }
        Ok(QuantileFunction { pieces })
    }
}

/// Two quantile functions cut at the union of their breakpoints.
#[derive(Clone, Copy, Debug)]
struct Aligned {
    du: f64,
    a0: f64,
    a1: f64,
    b0: f64,
    b1: f64,
    /// `dx/du` of each quantile function on this block.
    sa: f64,
    sb: f64,
}

fn align(q0: &QuantileFunction, q1: &QuantileFunction) -> Vec<Aligned> {
    let (p, q) = (&q0.pieces, &q1.pieces);
    let mut out = Vec::with_capacity(p.len() + q.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    while i < p.len() && j < q.len() {
        let end = p[i].u1.min(q[j].u1);
        if end > u {
            out.push(Aligned {
                du: end - u,
                a0: p[i].at(u),
                a1: p[i].at(end),
                b0: q[j].at(u),
                b1: q[j].at(end),
                sa: p[i].slope(),
                sb: q[j].slope(),
            });
            u = end;
        }
        if p[i].u1 <= end {
            i += 1;
        }
        if q[j].u1 <= end {
            j += 1;
        }
    }
    out
}

fn w2_sq_aligned(pieces: &[Aligned]) -> f64 {
    pieces
        .iter()
        .map(|s| {
            let (d0, d1) = (s.a0 - s.b0, s.a1 - s.b1);
            s.du * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0
        })
        .sum()
}

/// Squared quadratic Wasserstein distance on the line.
pub fn wasserstein2_sq_1d(nu0: &impl Quantiles, nu1: &impl Quantiles) -> Result<f64> {
    Ok(w2_sq_aligned(&align(&nu0.quantiles()?, &nu1.quantiles()?)))
}

pub fn wasserstein2_1d(nu0: &impl Quantiles, nu1: &impl Quantiles) -> Result<f64> {
    Ok(wasserstein2_sq_1d(nu0, nu1)?.sqrt())
}

/// `W_1`, the L1 distance between quantile functions.
pub fn wasserstein1_1d(nu0: &impl Quantiles, nu1: &impl Quantiles) -> Result<f64> {
    let pieces = align(&nu0.quantiles()?, &nu1.quantiles()?);
    Ok(pieces
        .iter()
        .map(|s| {
            let (d0, d1) = (s.a0 - s.b0, s.a1 - s.b1);
            if d0 * d1 >= 0.0 {
                s.du * 0.5 * (d0.abs() + d1.abs())
            } else {
                s.du * 0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
            }
        })
        .sum())
}

/// Exact optimal matching cost between equal-size point clouds by enumeration.
pub fn brute_force_w2_sq(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() || x.len() > 8 {
        return Err(Error::InvalidMeasure("brute force needs 1..=8 points on each side".into()));
    }
    let n = x.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, j)| (x[i] - y[*j]).powi(2)).sum::<f64>() / n as f64;
    best = best.min(cost(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// Nondecreasing map sampled at nodes, linearly interpolated between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneMap {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MonotoneMap {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.y[0];
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|v| *v <= x).clamp(1, n - 1);
        let (xa, xb) = (self.x[k - 1], self.x[k]);
        if xb == xa {
            return self.y[k];
        }
        let f = (x - xa) / (xb - xa);
        self.y[k - 1] + f * (self.y[k] - self.y[k - 1])
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.x.windows(2).all(|w| w[1] >= w[0]) && self.y.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Monotone rearrangement `F1^{-1} o F0` pushing `nu0` onto `nu1`.
pub fn brenier_map_1d(nu0: &impl Quantiles, nu1: &impl Quantiles) -> Result<MonotoneMap> {
    let q0 = nu0.quantiles()?;
    if q0.pieces.iter().any(|p| p.x1 == p.x0) {
        return Err(Error::InvalidMeasure("the source measure must have a density".into()));
    }
    let pieces = align(&q0, &nu1.quantiles()?);
    let mut x = Vec::with_capacity(pieces.len() + 1);
    let mut y = Vec::with_capacity(pieces.len() + 1);
    for s in &pieces {
        if x.last() != Some(&s.a0) || y.last() != Some(&s.b0) {
            x.push(s.a0);
            y.push(s.b0);
        }
        x.push(s.a1);
        y.push(s.b1);
    }
    Ok(MonotoneMap { x, y })
}

/// One uniform block of a piecewise-uniform measure; `a == b` is an atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformPiece {
    pub a: f64,
    pub b: f64,
    pub mass: f64,
}

/// Finite mixture of uniform laws on disjoint intervals, sorted by position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseUniform {
    pub pieces: Vec<UniformPiece>,
}

const GAUSS_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Mass below which a zero-width block is rounding, not an atom.
const NEGLIGIBLE_MASS: f64 = 1e-14;

impl PiecewiseUniform {
    /// `int f dnu` with four-point Gauss–Legendre on each block.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for p in &self.pieces {
            if p.b == p.a {
                acc += p.mass * f(p.a);
                continue;
            }
            let (c, h) = (0.5 * (p.a + p.b), 0.5 * (p.b - p.a));
            let mut s = 0.0;
            for (z, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                s += w * f(c + h * z);
            }
            acc += p.mass * 0.5 * s;
        }
        acc
    }

    pub fn mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass * 0.5 * (p.a + p.b)).sum::<f64>() / self.mass()
    }

    /// `int p log p`; infinite if the measure has atoms.
    pub fn internal_energy(&self) -> f64 {
        let mut acc = 0.0;
        for p in &self.pieces {
            if p.mass == 0.0 {
                continue;
            }
            if p.b == p.a {
                // blocks narrower than the spacing of floats carry negligible mass
                if p.mass < NEGLIGIBLE_MASS {
                    continue;
                }
                return f64::INFINITY;
            }
            acc += p.mass * (p.mass / (p.b - p.a)).ln();
        }
        acc
    }

    /// Exact cell averages on a uniform grid of `cells` cells over `[lo, hi]`.
    pub fn rebin(&self, lo: f64, hi: f64, cells: usize) -> Result<GridDensity> {
        let dx = (hi - lo) / cells as f64;
        let mut v = vec![0.0; cells];
        let mut lost = 0.0;
        for p in &self.pieces {
            if p.b == p.a {
                if p.a < lo || p.a > hi {
                    lost += p.mass;
                    continue;
                }
                let k = (((p.a - lo) / dx) as usize).min(cells - 1);
                v[k] += p.mass / dx;
                continue;
            }
            let density = p.mass / (p.b - p.a);
            let (a, b) = (p.a.max(lo), p.b.min(hi));
            lost += density * ((p.b - p.a) - (b - a).max(0.0));
            if b <= a {
                continue;
            }
            let ka = (((a - lo) / dx) as usize).min(cells - 1);
            let kb = (((b - lo) / dx) as usize).min(cells - 1);
            for (k, vk) in v.iter_mut().enumerate().take(kb + 1).skip(ka) {
                let c0 = lo + k as f64 * dx;
                let overlap = (b.min(c0 + dx) - a.max(c0)).max(0.0);
                *vk += density * overlap / dx;
            }
        }
        let total = self.mass();
        if lost > 0.01 * total {
            return Err(Error::Coverage { lo, hi, excluded: lost / total, limit: 0.01 });
        }
        GridDensity::new(lo, hi, v)
    }
}

impl AtomicMeasure for PiecewiseUniform {
    fn dim(&self) -> usize {
        1
    }
    fn atom_count(&self) -> usize {
        4 * self.pieces.len()
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(&[f64], f64)) {
        for p in &self.pieces {
            let (c, h) = (0.5 * (p.a + p.b), 0.5 * (p.b - p.a));
            for (z, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
                f(&[c + h * z], p.mass * 0.5 * w);
            }
        }
    }
}

/// The McCann interpolant `((1-t) Id + t T)#nu0` before any rebinning.
pub fn displacement_pieces(nu0: &impl Quantiles, nu1: &impl Quantiles, t: f64) -> Result<PiecewiseUniform> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("interpolation time {t} outside [0, 1]")));
    }
    let pieces = align(&nu0.quantiles()?, &nu1.quantiles()?);
    Ok(PiecewiseUniform {
        pieces: pieces
            .iter()
            .map(|s| {
                let a = (1.0 - t) * s.a0 + t * s.b0;
                // width from the slopes so that short blocks never collapse to atoms
                UniformPiece { a, b: a + s.du * ((1.0 - t) * s.sa + t * s.sb), mass: s.du }
            })
            .collect(),
    })
}

/// The McCann interpolant rebinned onto `nu0`'s grid.
pub fn displacement_interpolation(nu0: &GridDensity, nu1: &impl Quantiles, t: f64) -> Result<GridDensity> {
    displacement_pieces(nu0, nu1, t)?.rebin(nu0.lo, nu0.hi, nu0.cells())
}

/// Speed of a curve of densities at `t0`, two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDerivative {
    pub time: f64,
    /// `L2(p)` norm of the velocity field.
    pub velocity_norm: f64,
    /// `W2(p_{t0+h}, p_{t0}) / h`.
    pub fd_ratio: f64,
    /// Same at `h/2`, for a Richardson check.
    pub fd_ratio_half: f64,
    pub h: f64,
}

fn nearest_snapshot(curve: &[PdeState], t: f64) -> Result<&PdeState> {
    let s = curve
        .iter()
        .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
        .ok_or_else(|| Error::MissingSnapshots("empty curve".into()))?;
    let spacing = if curve.len() > 1 { (curve[1].time - curve[0].time).abs() } else { 0.0 };
    if (s.time - t).abs() > 0.5 * spacing + 1e-12 {
        return Err(Error::MissingSnapshots(format!("no snapshot near t = {t}")));
    }
    Ok(s)
}

/// Velocity-field norm at `t0` and finite-difference W2 ratios at steps `h`, `h/2`.
pub fn metric_derivative(curve: &[PdeState], t0: f64, h: f64) -> Result<MetricDerivative> {
    let s0 = nearest_snapshot(curve, t0)?;
    let sh = nearest_snapshot(curve, t0 + h)?;
    let sh2 = nearest_snapshot(curve, t0 + 0.5 * h)?;
    let fields = s0.fields();
    let velocity_norm = fields
        .iter_velocity()
        .map(|(v, w)| v * v * w)
        .sum::<f64>()
        .sqrt();
    Ok(MetricDerivative {
        time: s0.time,
        velocity_norm,
        fd_ratio: wasserstein2_1d(&s0.grid, &sh.grid)? / (sh.time - s0.time),
        fd_ratio_half: wasserstein2_1d(&s0.grid, &sh2.grid)? / (sh2.time - s0.time),
        h,
    })
}

/// Metric slopes of the free energy along the unperturbed and perturbed flows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub unperturbed_slope: f64,
    /// Omitted when `|L + B|` is degenerate.
    pub perturbed_slope: Option<f64>,
    pub inner_l_b: f64,
    pub norm_l: f64,
    pub norm_l_plus_b: f64,
    pub cosine: f64,
    pub degenerate: bool,
    /// `|L|^2 + <L, B>` from the fields.
    pub numerator_inner: f64,
    /// `|L|^2 + int <grad V + grad W*p, grad beta> p - int lap(beta) p`.
    pub numerator_direct: f64,
}

/// Threshold below which `|L + B|` counts as zero.
pub const SLOPE_DEGENERACY: f64 = 1e-10;

/// Slopes from sampled fields `l`, `b` with quadrature weights `w`.
pub fn slopes_from_fields(l: &[f64], b: &[f64], w: &[f64]) -> SlopeReport {
    let mut ll = 0.0;
    let mut lb = 0.0;
    let mut bb = 0.0;
    for i in 0..l.len() {
        ll += l[i] * l[i] * w[i];
        lb += l[i] * b[i] * w[i];
        bb += b[i] * b[i] * w[i];
    }
    let norm_l = ll.sqrt();
    let norm_lb = (ll + 2.0 * lb + bb).max(0.0).sqrt();
    let degenerate = norm_lb <= SLOPE_DEGENERACY;
    let numerator = ll + lb;
    SlopeReport {
        unperturbed_slope: -norm_l,
        perturbed_slope: if degenerate { None } else { Some(-numerator / norm_lb) },
        inner_l_b: lb,
        norm_l,
        norm_l_plus_b: norm_lb,
        cosine: if degenerate || norm_l == 0.0 { 1.0 } else { numerator / (norm_l * norm_lb) },
        degenerate,
        numerator_inner: numerator,
        numerator_direct: numerator,
    }
}

/// Slopes at a grid state, with `L = grad log(p / q_up)` and `B = grad beta`.
pub fn metric_slopes(state: &PdeState, beta: &PerturbationSpec) -> Result<SlopeReport> {
    let base = Potentials { perturbation: None, ..state.potentials.clone() };
    let st = PdeState { potentials: base, ..state.clone() };
    let f = st.fields();
    let x = st.grid.midpoints();
    let b: Vec<f64> = x.iter().map(|x| beta.grad_1d(*x)).collect();
    let mut report = slopes_from_fields(&f.relative_score, &b, &f.weights);
    let mut ll = 0.0;
    let mut corr = 0.0;
    for i in 0..x.len() {
        let w = f.weights[i];
        ll += f.relative_score[i] * f.relative_score[i] * w;
        let drift = st.potentials.confinement.grad_1d(x[i]) + f.interaction_grad[i];
        corr += (drift * b[i] - beta.laplacian_1d(x[i])) * w;
    }
    report.numerator_direct = ll + corr;
    Ok(report)
}
