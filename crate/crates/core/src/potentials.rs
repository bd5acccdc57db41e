//! Confinement, interaction and perturbation potentials.
//!
//! Potentials come from a small closed catalog with hand-coded derivatives:
//! a separable polynomial part plus isotropic Gaussian bumps. Positions are
//! flat slices of length 1 or 2.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AtomicMeasure, ParticleEnsemble};

/// `amplitude * exp(-|x - center e1|^2 / width^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl GaussianBump {
    fn offset(&self, x: &[f64], out: &mut [f64; 2]) -> f64 {
        let mut r2 = 0.0;
        for (d, xd) in x.iter().enumerate() {
            let y = if d == 0 { xd - self.center } else { *xd };
            out[d] = y;
            r2 += y * y;
        }
        r2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; 2];
        let r2 = self.offset(x, &mut y);
        self.amplitude * (-r2 / (self.width * self.width)).exp()
    }

    fn add_gradient(&self, x: &[f64], g: &mut [f64]) {
        let mut y = [0.0; 2];
        let s2 = self.width * self.width;
        let r2 = self.offset(x, &mut y);
        let f = -2.0 * self.amplitude / s2 * (-r2 / s2).exp();
        for d in 0..x.len() {
            g[d] += f * y[d];
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; 2];
        let s2 = self.width * self.width;
        let r2 = self.offset(x, &mut y);
        let n = x.len() as f64;
        self.amplitude * (-r2 / s2).exp() * (4.0 * r2 / (s2 * s2) - 2.0 * n / s2)
    }

    #[inline]
    fn value_1d(&self, x: f64) -> f64 {
        let y = x - self.center;
        self.amplitude * (-(y * y) / (self.width * self.width)).exp()
    }

    #[inline]
    fn grad_1d(&self, x: f64) -> f64 {
        let y = x - self.center;
        let s2 = self.width * self.width;
        -2.0 * self.amplitude / s2 * y * (-(y * y) / s2).exp()
    }

    #[inline]
    fn second_1d(&self, x: f64) -> f64 {
        let y = x - self.center;
        let s2 = self.width * self.width;
        self.amplitude * (-(y * y) / s2).exp() * (4.0 * y * y / (s2 * s2) - 2.0 / s2)
    }

    /// Lower bound on the smallest Hessian eigenvalue.
    fn min_curvature(&self) -> f64 {
        let s2 = self.width * self.width;
        if self.amplitude >= 0.0 {
            -2.0 * self.amplitude / s2
        } else {
            -self.amplitude.abs() * 4.0 * (-1.5f64).exp() / s2
        }
    }

    fn max_curvature(&self) -> f64 {
        2.0 * self.amplitude.abs() / (self.width * self.width)
    }
}

/// Separable polynomial `sum_d p(x_d)` plus Gaussian bumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    /// Coefficients of `p`, lowest degree first.
    pub poly: Vec<f64>,
    pub bumps: Vec<GaussianBump>,
}

impl Potential {
    pub fn zero() -> Self {
        Self { poly: vec![], bumps: vec![] }
    }

    /// `kappa/2 |x|^2`.
    pub fn quadratic(kappa: f64) -> Self {
        Self { poly: vec![0.0, 0.0, 0.5 * kappa], bumps: vec![] }
    }

    /// `kappa/2 |x|^2 + amplitude * exp(-|x|^2 / width^2)`.
    pub fn quadratic_bump(kappa: f64, amplitude: f64, width: f64) -> Self {
        Self {
            poly: vec![0.0, 0.0, 0.5 * kappa],
            bumps: vec![GaussianBump { amplitude, center: 0.0, width }],
        }
    }

    pub fn polynomial_bumps(poly: Vec<f64>, bumps: Vec<GaussianBump>) -> Self {
        Self { poly, bumps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite polynomial coefficient".into()));
        }
        for b in &self.bumps {
            if !(b.width > 0.0) || !b.amplitude.is_finite() || !b.center.is_finite() {
                return Err(Error::InvalidConfig(format!("bad bump {b:?}")));
            }
        }
        Ok(())
    }

    /// Highest degree with a nonzero coefficient, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.poly.iter().rposition(|c| *c != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.degree().is_none() && self.bumps.iter().all(|b| b.amplitude == 0.0)
    }

    /// `Some(kappa)` when the potential is exactly `c + kappa/2 |x|^2`.
    pub fn pure_quadratic(&self) -> Option<f64> {
        if self.bumps.iter().any(|b| b.amplitude != 0.0) {
            return None;
        }
        if self.poly.iter().enumerate().any(|(k, c)| k != 0 && k != 2 && *c != 0.0) {
            return None;
        }
        Some(2.0 * self.poly.get(2).copied().unwrap_or(0.0))
    }

    /// Even under `x -> -x`.
    pub fn is_even(&self) -> bool {
        self.poly.iter().enumerate().all(|(k, c)| k % 2 == 0 || *c == 0.0)
            && self.bumps.iter().all(|b| b.center == 0.0 || b.amplitude == 0.0)
    }

    fn active_bumps(&self) -> impl Iterator<Item = &GaussianBump> {
        self.bumps.iter().filter(|b| b.amplitude != 0.0)
    }

    pub fn has_bumps(&self) -> bool {
        self.active_bumps().next().is_some()
    }

    #[inline]
    pub fn poly_1d(&self, t: f64) -> f64 {
        self.poly.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    #[inline]
    pub fn poly_deriv_1d(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for k in (1..self.poly.len()).rev() {
            acc = acc * t + k as f64 * self.poly[k];
        }
        acc
    }

    #[inline]
    pub fn poly_second_1d(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for k in (2..self.poly.len()).rev() {
            acc = acc * t + (k * (k - 1)) as f64 * self.poly[k];
        }
        acc
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v: f64 = x.iter().map(|t| self.poly_1d(*t)).sum();
        if x.len() > 1 {
            // the constant term counts once, not per coordinate
            v -= (x.len() - 1) as f64 * self.poly.first().copied().unwrap_or(0.0);
        }
        v + self.active_bumps().map(|b| b.value(x)).sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for d in 0..x.len() {
            g[d] = self.poly_deriv_1d(x[d]);
        }
        for b in self.active_bumps() {
            b.add_gradient(x, g);
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let p: f64 = x.iter().map(|t| self.poly_second_1d(*t)).sum();
        p + self.active_bumps().map(|b| b.laplacian(x)).sum::<f64>()
    }

    #[inline]
    pub fn value_1d(&self, x: f64) -> f64 {
        let mut v = self.poly_1d(x);
        for b in &self.bumps {
            v += b.value_1d(x);
        }
        v
    }

    #[inline]
    pub fn grad_1d(&self, x: f64) -> f64 {
        let mut g = self.poly_deriv_1d(x);
        for b in &self.bumps {
            g += b.grad_1d(x);
        }
        g
    }

    #[inline]
    pub fn second_1d(&self, x: f64) -> f64 {
        let mut h = self.poly_second_1d(x);
        for b in &self.bumps {
            h += b.second_1d(x);
        }
        h
    }

    /// Lower bound on the smallest Hessian eigenvalue over `|x_d| <= half_width`.
    pub fn convexity_modulus(&self, half_width: f64) -> f64 {
        let poly = match self.degree() {
            None | Some(0) | Some(1) => 0.0,
            Some(2) => 2.0 * self.poly[2],
            Some(_) => sample_min(|t| self.poly_second_1d(t), half_width),
        };
        poly + self.active_bumps().map(|b| b.min_curvature()).sum::<f64>()
    }

    /// Upper bound on the Hessian spectral radius over `|x_d| <= half_width`.
    pub fn grad_lipschitz(&self, half_width: f64) -> f64 {
        let poly = match self.degree() {
            None | Some(0) | Some(1) => 0.0,
            Some(2) => (2.0 * self.poly[2]).abs(),
            Some(_) => -sample_min(|t| -self.poly_second_1d(t).abs(), half_width),
        };
        poly + self.active_bumps().map(|b| b.max_curvature()).sum::<f64>()
    }
}

fn sample_min(f: impl Fn(f64) -> f64, half_width: f64) -> f64 {
    let n = 4001;
    (0..n)
        .map(|i| f(-half_width + 2.0 * half_width * i as f64 / (n - 1) as f64))
        .fold(f64::INFINITY, f64::min)
}

/// Box on which growth and Lipschitz constants are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self { dim: 1, half_width: 10.0, points: 10_000, seed: 0x5eed }
    }
}

/// A potential together with its sampled regularity constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub potential: Potential,
    pub grad_lipschitz: f64,
    pub linear_growth_const: f64,
    pub convexity_modulus: f64,
}

impl PotentialSpec {
    pub fn new(potential: Potential) -> Result<Self> {
        Self::with_box(potential, SampleBox::default())
    }

    pub fn with_box(potential: Potential, bx: SampleBox) -> Result<Self> {
        potential.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(bx.seed);
        let mut growth: f64 = 0.0;
        let mut x = vec![0.0; bx.dim];
        let mut g = vec![0.0; bx.dim];
        for _ in 0..bx.points {
            for xd in x.iter_mut() {
                *xd = rng.gen_range(-bx.half_width..=bx.half_width);
            }
            potential.gradient(&x, &mut g);
            growth = growth.max(norm(&g) / (1.0 + norm(&x)));
        }
        Ok(Self {
            grad_lipschitz: potential.grad_lipschitz(bx.half_width),
            convexity_modulus: potential.convexity_modulus(bx.half_width),
            linear_growth_const: growth,
            potential,
        })
    }

    pub fn zero() -> Self {
        Self::new(Potential::zero()).expect("zero potential is valid")
    }

    pub fn quadratic(kappa: f64) -> Result<Self> {
        Self::new(Potential::quadratic(kappa))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.potential.value(x)
    }
    pub fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.potential.gradient(x, g)
    }
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.potential.laplacian(x)
    }
    #[inline]
    pub fn value_1d(&self, x: f64) -> f64 {
        self.potential.value_1d(x)
    }
    #[inline]
    pub fn grad_1d(&self, x: f64) -> f64 {
        self.potential.grad_1d(x)
    }
    #[inline]
    pub fn laplacian_1d(&self, x: f64) -> f64 {
        self.potential.second_1d(x)
    }
}

/// An interaction potential. Evenness is recorded, not enforced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub spec: PotentialSpec,
    pub symmetric: bool,
}

impl InteractionSpec {
    pub fn new(potential: Potential) -> Result<Self> {
        let symmetric = potential.is_even();
        Ok(Self { spec: PotentialSpec::new(potential)?, symmetric })
    }

    pub fn zero() -> Self {
        Self { spec: PotentialSpec::zero(), symmetric: true }
    }

    pub fn quadratic(kappa: f64) -> Result<Self> {
        Self::new(Potential::quadratic(kappa))
    }

    /// Human-readable warnings for assumption violations.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = vec![];
        if !self.symmetric {
            w.push("interaction potential is not even".to_string());
        }
        w
    }

    pub fn potential(&self) -> &Potential {
        &self.spec.potential
    }
    pub fn convexity_modulus(&self) -> f64 {
        self.spec.convexity_modulus
    }
    pub fn value(&self, x: &[f64]) -> f64 {
        self.spec.value(x)
    }
    pub fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.spec.gradient(x, g)
    }
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.spec.laplacian(x)
    }
    #[inline]
    pub fn value_1d(&self, x: f64) -> f64 {
        self.spec.value_1d(x)
    }
    #[inline]
    pub fn grad_1d(&self, x: f64) -> f64 {
        self.spec.grad_1d(x)
    }
}

/// One compactly supported smooth bump,
/// `amplitude * exp(1 - 1/(1 - r^2/R^2) - r^2/(2 v))` for `r < R`, where `r = |x - center e1|`.
/// Without `gauss_variance` the Gaussian factor is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactBump {
    pub amplitude: f64,
    pub center: f64,
    pub radius: f64,
    pub gauss_variance: Option<f64>,
}

impl CompactBump {
    pub fn mollifier(amplitude: f64, center: f64, radius: f64) -> Self {
        Self { amplitude, center, radius, gauss_variance: None }
    }

    pub fn windowed_gaussian(amplitude: f64, center: f64, radius: f64, variance: f64) -> Self {
        Self { amplitude, center, radius, gauss_variance: Some(variance) }
    }

    fn inv_2v(&self) -> f64 {
        self.gauss_variance.map_or(0.0, |v| 0.5 / v)
    }

    /// `(value, E', E'')` with value = `a e^{E(rho)}`, derivatives in `rho = r^2`.
    #[inline]
    fn profile(&self, rho: f64) -> Option<(f64, f64, f64)> {
        let r2 = self.radius * self.radius;
        if rho >= r2 || self.amplitude == 0.0 {
            return None;
        }
        let u = 1.0 - rho / r2;
        let e = 1.0 - 1.0 / u - rho * self.inv_2v();
        let e1 = -self.inv_2v() - 1.0 / (r2 * u * u);
        let e2 = -2.0 / (r2 * r2 * u * u * u);
        Some((self.amplitude * e.exp(), e1, e2))
    }

    fn offset(&self, x: &[f64], y: &mut [f64; 2]) -> f64 {
        let mut rho = 0.0;
        for (d, xd) in x.iter().enumerate() {
            y[d] = if d == 0 { xd - self.center } else { *xd };
            rho += y[d] * y[d];
        }
        rho
    }
}

/// A perturbation potential: a finite sum of compact bumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub bumps: Vec<CompactBump>,
}

impl PerturbationSpec {
    pub fn new(bumps: Vec<CompactBump>) -> Result<Self> {
        for b in &bumps {
            if !(b.radius > 0.0) || !b.amplitude.is_finite() || !b.center.is_finite() {
                return Err(Error::InvalidConfig(format!("bad perturbation bump {b:?}")));
            }
            if let Some(v) = b.gauss_variance {
                if !(v > 0.0) {
                    return Err(Error::InvalidConfig("perturbation variance must be positive".into()));
                }
            }
        }
        Ok(Self { bumps })
    }

    pub fn none() -> Self {
        Self { bumps: vec![] }
    }

    pub fn is_zero(&self) -> bool {
        self.bumps.iter().all(|b| b.amplitude == 0.0)
    }

    /// Radius of a ball about the origin outside which everything vanishes.
    pub fn support_radius(&self) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.center.abs() + b.radius)
            .fold(0.0, f64::max)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut y = [0.0; 2];
        self.bumps
            .iter()
            .filter_map(|b| b.profile(b.offset(x, &mut y)).map(|p| p.0))
            .sum()
    }

    pub fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut y = [0.0; 2];
        for b in &self.bumps {
            let rho = b.offset(x, &mut y);
            if let Some((v, e1, _)) = b.profile(rho) {
                for d in 0..x.len() {
                    g[d] += v * e1 * 2.0 * y[d];
                }
            }
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mut y = [0.0; 2];
        let mut acc = 0.0;
        for b in &self.bumps {
            let rho = b.offset(x, &mut y);
            if let Some((v, e1, e2)) = b.profile(rho) {
                acc += v * (4.0 * e1 * e1 * rho + 4.0 * e2 * rho + 2.0 * n * e1);
            }
        }
        acc
    }

    #[inline]
    pub fn value_1d(&self, x: f64) -> f64 {
        self.value(&[x])
    }

    #[inline]
    pub fn grad_1d(&self, x: f64) -> f64 {
        let mut g = 0.0;
        for b in &self.bumps {
            let y = x - b.center;
            if let Some((v, e1, _)) = b.profile(y * y) {
                g += v * e1 * 2.0 * y;
            }
        }
        g
    }

    #[inline]
    pub fn laplacian_1d(&self, x: f64) -> f64 {
        self.laplacian(&[x])
    }
}

/// The full set of potentials driving a (possibly perturbed) system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub confinement: PotentialSpec,
    pub interaction: InteractionSpec,
    pub perturbation: Option<PerturbationSpec>,
}

impl Potentials {
    pub fn new(confinement: PotentialSpec, interaction: InteractionSpec) -> Self {
        Self { confinement, interaction, perturbation: None }
    }

    pub fn with_perturbation(mut self, beta: PerturbationSpec) -> Self {
        self.perturbation = Some(beta);
        self
    }

    /// The perturbation, if present and not identically zero.
    pub fn active_perturbation(&self) -> Option<&PerturbationSpec> {
        self.perturbation.as_ref().filter(|b| !b.is_zero())
    }

    /// Same system with the perturbation removed.
    pub fn unperturbed(&self) -> Self {
        Self { perturbation: None, ..self.clone() }
    }

    /// `(kappa_V, kappa_W)` when both potentials are centered quadratics and no perturbation is active.
    pub fn gaussian_closure(&self) -> Option<(f64, f64)> {
        if self.active_perturbation().is_some() {
            return None;
        }
        Some((
            self.confinement.potential.pure_quadratic()?,
            self.interaction.potential().pure_quadratic()?,
        ))
    }

    /// Drift potential gradient `grad V + grad beta` in one dimension.
    #[inline]
    pub fn external_grad_1d(&self, x: f64) -> f64 {
        let g = self.confinement.grad_1d(x);
        match self.active_perturbation() {
            Some(b) => g + b.grad_1d(x),
            None => g,
        }
    }
}

/// Which generalized potential to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialVariant {
    /// `V + (W*mu)/2`
    Half,
    /// `V + W*mu`
    Full,
    /// `V`
    ConfOnly,
}

/// Which Gibbs-type density to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsVariant {
    Q,
    QUp,
    QDown,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_nonempty(mu: &impl AtomicMeasure) -> Result<()> {
    if mu.atom_count() == 0 {
        return Err(Error::InvalidMeasure("empty measure".into()));
    }
    Ok(())
}

/// `grad (W * mu)(x)`, summed over the atoms of `mu` in index order.
pub fn convolve_gradient(w: &InteractionSpec, mu: &impl AtomicMeasure, x: &[f64]) -> Result<Vec<f64>> {
    check_nonempty(mu)?;
    if x.len() != mu.dim() {
        return Err(Error::InvalidMeasure("point and measure dimensions differ".into()));
    }
    let n = x.len();
    let mut acc = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    mu.for_each_atom(&mut |y, weight| {
        for d in 0..n {
            z[d] = x[d] - y[d];
        }
        w.gradient(&z, &mut g);
        for d in 0..n {
            acc[d] += weight * g[d];
        }
    });
    Ok(acc)
}

/// `(W * mu)(x)`.
pub fn convolve_value(w: &InteractionSpec, mu: &impl AtomicMeasure, x: &[f64]) -> Result<f64> {
    check_nonempty(mu)?;
    let n = x.len();
    let mut acc = 0.0;
    let mut z = vec![0.0; n];
    mu.for_each_atom(&mut |y, weight| {
        for d in 0..n {
            z[d] = x[d] - y[d];
        }
        acc += weight * w.value(&z);
    });
    Ok(acc)
}

pub fn generalized_potential(
    v: &PotentialSpec,
    w: &InteractionSpec,
    x: &[f64],
    mu: &impl AtomicMeasure,
    variant: PotentialVariant,
) -> Result<f64> {
    let base = v.value(x);
    Ok(match variant {
        PotentialVariant::ConfOnly => base,
        PotentialVariant::Half => base + 0.5 * convolve_value(w, mu, x)?,
        PotentialVariant::Full => base + convolve_value(w, mu, x)?,
    })
}

pub fn gibbs_density(
    v: &PotentialSpec,
    w: &InteractionSpec,
    x: &[f64],
    mu: &impl AtomicMeasure,
    variant: GibbsVariant,
) -> Result<f64> {
    let pv = match variant {
        GibbsVariant::Q => PotentialVariant::Half,
        GibbsVariant::QUp => PotentialVariant::Full,
        GibbsVariant::QDown => PotentialVariant::ConfOnly,
    };
    Ok((-generalized_potential(v, w, x, mu, pv)?).exp())
}

/// Leave-one-out interaction sums over a one-dimensional point cloud.
///
/// For each `i`, evaluates `sum_{j != i} f(x_i - x_j) g_j` with `f` either
/// `W` or `W'`. The polynomial part of `W` goes through power sums in O(N deg);
/// bumps fall back to the pairwise loop.
pub struct PairKernel<'a> {
    w: &'a Potential,
}

impl<'a> PairKernel<'a> {
    pub fn new(w: &'a InteractionSpec) -> Self {
        Self { w: w.potential() }
    }

    /// `out[i] = sum_{j != i} W'(x_i - x_j) g_j` (`g = None` means all ones).
    pub fn gradient_sums(&self, x: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        // W'(z) = sum_m a_m z^m
        let a: Vec<f64> = (1..self.w.poly.len())
            .map(|k| k as f64 * self.w.poly[k])
            .collect();
        self.poly_sums(&a, x, g, out);
        self.bump_sums(x, g, out, |b, z| b.grad_1d(z));
    }

    /// `out[i] = sum_{j != i} W(x_i - x_j) g_j`.
    pub fn value_sums(&self, x: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        self.poly_sums(&self.w.poly, x, g, out);
        self.bump_sums(x, g, out, |b, z| b.value_1d(z));
    }

    fn poly_sums(&self, a: &[f64], x: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        let deg = match a.iter().rposition(|c| *c != 0.0) {
            Some(d) => d,
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
        };
        // weighted power sums S_r = sum_j x_j^r g_j
        let mut s = vec![0.0; deg + 1];
        for (j, xj) in x.iter().enumerate() {
            let gj = g.map_or(1.0, |g| g[j]);
            let mut p = gj;
            for sr in s.iter_mut() {
                *sr += p;
                p *= xj;
            }
        }
        // (x - y)^m = sum_r C(m, r) x^(m-r) (-y)^r
        let binom = binomials(deg);
        for (i, xi) in x.iter().enumerate() {
            let gi = g.map_or(1.0, |g| g[i]);
            let mut total = 0.0;
            for m in 0..=deg {
                if a[m] == 0.0 {
                    continue;
                }
                let mut t = 0.0;
                for r in 0..=m {
                    let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                    t += binom[m][r] * xi.powi((m - r) as i32) * sign * s[r];
                }
                total += a[m] * t;
            }
            // drop the diagonal j = i, where x_i - x_j = 0
            out[i] = total - a[0] * gi;
        }
    }

    fn bump_sums(
        &self,
        x: &[f64],
        g: Option<&[f64]>,
        out: &mut [f64],
        f: impl Fn(&GaussianBump, f64) -> f64,
    ) {
        for b in self.w.bumps.iter().filter(|b| b.amplitude != 0.0) {
            for i in 0..x.len() {
                let mut acc = 0.0;
                for j in 0..x.len() {
                    if j != i {
                        acc += f(b, x[i] - x[j]) * g.map_or(1.0, |g| g[j]);
                    }
                }
                out[i] += acc;
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

/// Leave-one-out mean interaction gradient for every particle of an ensemble,
/// `(1/(N-1)) sum_{j != i} grad W(x_i - x_j)`, written into `out` (flat, particle-major).
pub fn ensemble_interaction_gradient(w: &InteractionSpec, e: &ParticleEnsemble, out: &mut [f64]) {
    let n = e.len();
    let dim = e.dim();
    let scale = 1.0 / (n - 1) as f64;
    let wp = w.potential();
    if dim == 1 {
        PairKernel::new(w).gradient_sums(&e.positions, None, out);
    } else {
        // separable polynomial part, coordinate by coordinate
        let mut coord = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let poly_only = InteractionSpec {
            spec: PotentialSpec {
                potential: Potential::polynomial_bumps(wp.poly.clone(), vec![]),
                ..w.spec.clone()
            },
            symmetric: w.symmetric,
        };
        for d in 0..dim {
            for i in 0..n {
                coord[i] = e.positions[i * dim + d];
            }
            PairKernel::new(&poly_only).gradient_sums(&coord, None, &mut tmp);
            for i in 0..n {
                out[i * dim + d] = tmp[i];
            }
        }
        if wp.has_bumps() {
            let bumps_only = Potential::polynomial_bumps(vec![], wp.bumps.clone());
            let mut z = vec![0.0; dim];
            let mut g = vec![0.0; dim];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    for d in 0..dim {
                        z[d] = e.positions[i * dim + d] - e.positions[j * dim + d];
                    }
                    bumps_only.gradient(&z, &mut g);
                    for d in 0..dim {
                        out[i * dim + d] += g[d];
                    }
                }
            }
        }
    }
    out.iter_mut().for_each(|o| *o *= scale);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ParticleEnsemble;
    use approx::assert_relative_eq;

    fn ens(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::new(1, xs.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn convolve_gradient_examples() {
        let w = InteractionSpec::quadratic(1.0).unwrap();
        assert_eq!(convolve_gradient(&w, &ens(&[-1.0, 1.0]), &[0.0]).unwrap()[0], 0.0);
        assert_relative_eq!(
            convolve_gradient(&w, &ens(&[0.0, 1.0, 2.0]), &[0.5]).unwrap()[0],
            -0.5,
            epsilon = 1e-15
        );
        // a tight pair standing in for a point mass at m = 0.7
        let g = convolve_gradient(&w, &ens(&[0.7, 0.7]), &[2.0]).unwrap()[0];
        assert_relative_eq!(g, 2.0 - 0.7, epsilon = 1e-15);
    }

    #[test]
    fn generalized_potential_examples() {
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let w = InteractionSpec::quadratic(1.0).unwrap();
        let mu = ens(&[0.0, 0.0]);
        let full = generalized_potential(&v, &w, &[1.0], &mu, PotentialVariant::Full).unwrap();
        let half = generalized_potential(&v, &w, &[1.0], &mu, PotentialVariant::Half).unwrap();
        assert_relative_eq!(full, 1.0);
        assert_relative_eq!(half, 0.75);
        let z = InteractionSpec::zero();
        for variant in [PotentialVariant::Half, PotentialVariant::Full, PotentialVariant::ConfOnly] {
            assert_relative_eq!(generalized_potential(&v, &z, &[2.0], &mu, variant).unwrap(), 2.0);
        }
    }

    #[test]
    fn gibbs_examples() {
        let v = PotentialSpec::quadratic(1.0).unwrap();
        let z = InteractionSpec::zero();
        let mu = ens(&[0.3, -0.2]);
        let q = gibbs_density(&v, &z, &[1.0], &mu, GibbsVariant::Q).unwrap();
        assert_relative_eq!(q, 0.606_530_659_712_633_4, epsilon = 1e-15);
        let one = gibbs_density(&PotentialSpec::zero(), &z, &[3.0], &mu, GibbsVariant::QUp).unwrap();
        assert_eq!(one, 1.0);
        let w = InteractionSpec::quadratic(1.0).unwrap();
        let q = gibbs_density(&v, &w, &[1.0], &mu, GibbsVariant::Q).unwrap();
        let qu = gibbs_density(&v, &w, &[1.0], &mu, GibbsVariant::QUp).unwrap();
        assert!(q / qu >= 1.0);
    }

    #[test]
    fn empty_measure_rejected() {
        struct Empty;
        impl AtomicMeasure for Empty {
            fn dim(&self) -> usize {
                1
            }
            fn atom_count(&self) -> usize {
                0
            }
            fn for_each_atom(&self, _: &mut dyn FnMut(&[f64], f64)) {}
        }
        let w = InteractionSpec::quadratic(1.0).unwrap();
        assert!(matches!(convolve_gradient(&w, &Empty, &[0.0]), Err(Error::InvalidMeasure(_))));
    }

    #[test]
    fn bump_convexity_bounds() {
        let p = Potential::quadratic_bump(1.0, 0.5, 0.5);
        assert_relative_eq!(p.convexity_modulus(10.0), 1.0 - 4.0);
        let p = Potential::quadratic_bump(1.0, -0.5, 1.0);
        let k = p.convexity_modulus(10.0);
        let sampled = (0..20001)
            .map(|i| p.second_1d(-5.0 + i as f64 * 5e-4))
            .fold(f64::INFINITY, f64::min);
        assert!(k <= sampled + 1e-12 && sampled - k < 1e-6);
    }

    #[test]
    fn pair_kernel_matches_pairwise() {
        let w = InteractionSpec::new(Potential::polynomial_bumps(
            vec![0.1, 0.0, 0.7, 0.0, 0.05],
            vec![GaussianBump { amplitude: -0.3, center: 0.0, width: 0.8 }],
        ))
        .unwrap();
        let x: Vec<f64> = (0..40).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.21).collect();
        let g: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut fast = vec![0.0; 40];
        PairKernel::new(&w).gradient_sums(&x, Some(&g), &mut fast);
        let mut vals = vec![0.0; 40];
        PairKernel::new(&w).value_sums(&x, Some(&g), &mut vals);
        for i in 0..40 {
            let mut sg = 0.0;
            let mut sv = 0.0;
            for j in 0..40 {
                if j != i {
                    sg += w.grad_1d(x[i] - x[j]) * g[j];
                    sv += w.value_1d(x[i] - x[j]) * g[j];
                }
            }
            assert_relative_eq!(fast[i], sg, epsilon = 1e-11, max_relative = 1e-11);
            assert_relative_eq!(vals[i], sv, epsilon = 1e-11, max_relative = 1e-11);
        }
    }

    #[test]
    fn perturbation_support() {
        let b = PerturbationSpec::new(vec![CompactBump::windowed_gaussian(0.4, 0.5, 1.0, 0.3)]).unwrap();
        assert_relative_eq!(b.support_radius(), 1.5);
        for x in [1.5001, 2.0, -0.50001, -3.0] {
            assert_eq!(b.value_1d(x), 0.0);
            assert_eq!(b.grad_1d(x), 0.0);
        }
        assert_relative_eq!(b.value_1d(0.5), 0.4);
    }
}
