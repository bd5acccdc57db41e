//! Particle ensembles, grid densities and Gaussian laws.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Anything that can be viewed as a finite weighted sum of point masses.
///
/// Grids expose their cell midpoints weighted by cell mass.
pub trait AtomicMeasure {
    fn dim(&self) -> usize;
    fn atom_count(&self) -> usize;
    fn for_each_atom(&self, f: &mut dyn FnMut(&[f64], f64));
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianState {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidMeasure(format!("bad Gaussian ({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = x - self.mean;
        (-0.5 * z * z / self.variance).exp() / (std::f64::consts::TAU * self.variance).sqrt()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = x - self.mean;
        -0.5 * z * z / self.variance - 0.5 * (std::f64::consts::TAU * self.variance).ln()
    }

    pub fn score(&self, x: f64) -> f64 {
        -(x - self.mean) / self.variance
    }
}

/// `N` equally weighted points in dimension 1 or 2, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    dim: usize,
    pub positions: Vec<f64>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<f64>, time: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Dimension(dim, "1 or 2"));
        }
        if !positions.len().is_multiple_of(dim) {
            return Err(Error::InvalidMeasure("position count not a multiple of dimension".into()));
        }
        if positions.len() / dim < 2 {
            return Err(Error::InvalidMeasure("an ensemble needs at least 2 particles".into()));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate at {i}")));
        }
        Ok(Self { dim, positions, time })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }
}

impl AtomicMeasure for ParticleEnsemble {
    fn dim(&self) -> usize {
        self.dim
    }
    fn atom_count(&self) -> usize {
        self.len()
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(&[f64], f64)) {
        let w = 1.0 / self.len() as f64;
        for p in self.positions.chunks_exact(self.dim) {
            f(p, w);
        }
    }
}

/// Cell-averaged probability density on `[lo, hi]` with `M` equal cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub lo: f64,
    pub hi: f64,
    values: Vec<f64>,
    floor_eps: f64,
}

/// Relative floor applied before taking logarithms.
pub const FLOOR_RELATIVE: f64 = 1e-14;

impl GridDensity {
    /// Validates and renormalizes to unit mass.
    pub fn new(lo: f64, hi: f64, mut values: Vec<f64>) -> Result<Self> {
        Self::check(lo, hi, &values)?;
        let dx = (hi - lo) / values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() * dx;
        if !(mass > 0.0) {
            return Err(Error::InvalidMeasure("grid density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self::from_normalized(lo, hi, values))
    }

    /// Wraps values that already carry unit mass (no renormalization).
    pub fn from_normalized(lo: f64, hi: f64, values: Vec<f64>) -> Self {
        let max = values.iter().cloned().fold(0.0, f64::max);
        Self { lo, hi, values, floor_eps: FLOOR_RELATIVE * max }
    }

    fn check(lo: f64, hi: f64, values: &[f64]) -> Result<()> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidMeasure(format!("bad domain [{lo}, {hi}]")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidMeasure("grid needs at least 2 cells".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidMeasure("cell values must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn floor_eps(&self) -> f64 {
        self.floor_eps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.cells()).map(|i| self.midpoint(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    /// Cell value after flooring.
    pub fn floored(&self, i: usize) -> f64 {
        self.values[i].max(self.floor_eps)
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(self.floor_eps).ln()).collect()
    }

    /// Mass added by the floor, reported alongside entropy integrals.
    pub fn floor_mass(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (self.floor_eps - v).max(0.0))
            .sum::<f64>()
            * self.dx()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Cumulative distribution at `x`, exact for the piecewise-constant density.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let dx = self.dx();
        let t = (x - self.lo) / dx;
        let k = (t.floor() as usize).min(self.cells() - 1);
        let full: f64 = self.values[..k].iter().sum::<f64>() * dx;
        full + self.values[k] * (t - k as f64) * dx
    }

    /// Total-variation style distance `sum |p - q| dx` on a common grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.cells() != other.cells() || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::InvalidMeasure("grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.dx())
    }
}

impl AtomicMeasure for GridDensity {
    fn dim(&self) -> usize {
        1
    }
    fn atom_count(&self) -> usize {
        self.cells()
    }
    fn for_each_atom(&self, f: &mut dyn FnMut(&[f64], f64)) {
        let dx = self.dx();
        for (i, v) in self.values.iter().enumerate() {
            f(&[self.midpoint(i)], v * dx);
        }
    }
}

pub fn barycenter(mu: &impl AtomicMeasure) -> Vec<f64> {
    let mut b = vec![0.0; mu.dim()];
    let mut total = 0.0;
    mu.for_each_atom(&mut |x, w| {
        for (bd, xd) in b.iter_mut().zip(x) {
            *bd += w * xd;
        }
        total += w;
    });
    b.iter_mut().for_each(|v| *v /= total);
    b
}

/// `int |x|^2 dmu`.
pub fn second_moment(mu: &impl AtomicMeasure) -> f64 {
    let mut m = 0.0;
    let mut total = 0.0;
    mu.for_each_atom(&mut |x, w| {
        m += w * x.iter().map(|v| v * v).sum::<f64>();
        total += w;
    });
    m / total
}

/// Draws `n` points from `g` using slot 0 of each particle's stream.
pub fn sample_gaussian(g: &GaussianState, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n < 2 {
        return Err(Error::InvalidMeasure("an ensemble needs at least 2 particles".into()));
    }
    let s = g.std_dev();
    let positions = (0..n)
        .map(|i| g.mean + s * NoiseStream::new(seed, i as u64).next_normal())
        .collect();
    ParticleEnsemble::new(1, positions, 0.0)
}

/// Draws `n` points from a grid density by exact inverse-CDF sampling.
pub fn sample_grid(p: &GridDensity, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n < 2 {
        return Err(Error::InvalidMeasure("an ensemble needs at least 2 particles".into()));
    }
    let dx = p.dx();
    let mut cdf = Vec::with_capacity(p.cells() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for v in p.values() {
        acc += v * dx;
        cdf.push(acc);
    }
    let total = acc;
    let positions = (0..n)
        .map(|i| {
            let u = NoiseStream::new(seed, i as u64).next_uniform() * total;
            let k = cdf.partition_point(|c| *c <= u).clamp(1, p.cells()) - 1;
            let frac = if p.values()[k] > 0.0 { (u - cdf[k]) / (p.values()[k] * dx) } else { 0.5 };
            p.lo + (k as f64 + frac.clamp(0.0, 1.0)) * dx
        })
        .collect();
    ParticleEnsemble::new(1, positions, 0.0)
}

/// Silverman's rule of thumb for a one-dimensional ensemble.
pub fn silverman_bandwidth(e: &ParticleEnsemble) -> f64 {
    let n = e.len() as f64;
    let mean = e.positions.iter().sum::<f64>() / n;
    let var = e.positions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = e.positions.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let t = p * (sorted.len() - 1) as f64;
        let k = t.floor() as usize;
        let f = t - k as f64;
        sorted[k] * (1.0 - f) + sorted[(k + 1).min(sorted.len() - 1)] * f
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { var.sqrt().min(iqr / 1.34) } else { var.sqrt() };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate of a 1-D ensemble, renormalized on the grid.
///
/// Particles are linearly binned onto the cell midpoints and the binned
/// counts are convolved with the kernel truncated at six bandwidths.
pub fn density_from_ensemble(
    e: &ParticleEnsemble,
    lo: f64,
    hi: f64,
    cells: usize,
    bandwidth: f64,
) -> Result<GridDensity> {
    if e.dim() != 1 {
        return Err(Error::Dimension(e.dim(), "1"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig("bandwidth must be positive".into()));
    }
    if cells < 2 || !(hi > lo) {
        return Err(Error::InvalidMeasure("bad grid".into()));
    }
    let outside = e.positions.iter().filter(|x| **x < lo || **x > hi).count();
    let excluded = outside as f64 / e.len() as f64;
    if excluded > 0.01 {
        return Err(Error::Coverage { lo, hi, excluded, limit: 0.01 });
    }
    let dx = (hi - lo) / cells as f64;
    let mut bins = vec![0.0; cells];
    for x in &e.positions {
        if *x < lo || *x > hi {
            continue;
        }
        let t = ((x - lo) / dx - 0.5).clamp(0.0, (cells - 1) as f64);
        let k = (t.floor() as usize).min(cells - 2);
        let f = t - k as f64;
        bins[k] += 1.0 - f;
        bins[k + 1] += f;
    }
    let reach = ((6.0 * bandwidth / dx).ceil() as usize).min(cells - 1);
    let kernel: Vec<f64> = (0..=reach)
        .map(|k| {
            let z = k as f64 * dx / bandwidth;
            (-0.5 * z * z).exp()
        })
        .collect();
    let mut values = vec![0.0; cells];
    for (i, out) in values.iter_mut().enumerate() {
        let a = i.saturating_sub(reach);
        let b = (i + reach).min(cells - 1);
        let mut acc = 0.0;
        for (j, c) in bins.iter().enumerate().take(b + 1).skip(a) {
            acc += c * kernel[i.abs_diff(j)];
        }
        *out = acc;
    }
    GridDensity::new(lo, hi, values)
}

/// Tail mass beyond `z` standard deviations, bounded by Mills' ratio.
fn gaussian_tail_bound(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    (-0.5 * z * z).exp() / (z * std::f64::consts::TAU.sqrt())
}

/// Largest tail mass tolerated when discretizing a Gaussian on a grid.
pub const GAUSSIAN_TAIL_LIMIT: f64 = 1e-14;

/// Cell averages of the normal density (Simpson rule per cell), renormalized.
pub fn gaussian_density_on_grid(g: &GaussianState, lo: f64, hi: f64, cells: usize) -> Result<GridDensity> {
    let s = g.std_dev();
    let excluded = gaussian_tail_bound((g.mean - lo) / s) + gaussian_tail_bound((hi - g.mean) / s);
    if excluded > GAUSSIAN_TAIL_LIMIT {
        return Err(Error::Coverage { lo, hi, excluded, limit: GAUSSIAN_TAIL_LIMIT });
    }
    if cells < 2 {
        return Err(Error::InvalidMeasure("grid needs at least 2 cells".into()));
    }
    let dx = (hi - lo) / cells as f64;
    let values = (0..cells)
        .map(|i| {
            let a = lo + i as f64 * dx;
            (g.pdf(a) + 4.0 * g.pdf(a + 0.5 * dx) + g.pdf(a + dx)) / 6.0
        })
        .collect();
    GridDensity::new(lo, hi, values)
}

/// Default grid `[m - 8 s, m + 8 s]` for a Gaussian.
pub fn default_gaussian_domain(g: &GaussianState) -> (f64, f64) {
    let s = g.std_dev();
    (g.mean - 8.0 * s, g.mean + 8.0 * s)
}

fn write_comments(out: &mut impl Write, comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

/// One row per particle: `index,x` (or `index,x,y`).
pub fn write_ensemble_csv(out: &mut impl Write, e: &ParticleEnsemble, comments: &[String]) -> std::io::Result<()> {
    write_comments(out, comments)?;
    writeln!(out, "# time,{}", e.time)?;
    if e.dim() == 1 {
        writeln!(out, "index,x")?;
    } else {
        writeln!(out, "index,x,y")?;
    }
    for (i, p) in e.positions.chunks_exact(e.dim()).enumerate() {
        write!(out, "{i}")?;
        for v in p {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One row per cell: `cell,x_mid,density`.
pub fn write_grid_csv(out: &mut impl Write, p: &GridDensity, comments: &[String]) -> std::io::Result<()> {
    write_comments(out, comments)?;
    writeln!(out, "# domain,{},{}", p.lo, p.hi)?;
    writeln!(out, "cell,x_mid,density")?;
    for (i, v) in p.values().iter().enumerate() {
        writeln!(out, "{i},{},{v}", p.midpoint(i))?;
    }
    Ok(())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::InvalidMeasure(msg.into())
}

pub fn read_ensemble_csv(input: impl BufRead) -> Result<ParticleEnsemble> {
    let mut time = 0.0;
    let mut dim = 0;
    let mut positions = vec![];
    for line in input.lines() {
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if let Some(rest) = line.strip_prefix("# time,") {
            time = rest.trim().parse().map_err(|_| parse_err("bad time line"))?;
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if line.starts_with("index") {
            dim = line.split(',').count() - 1;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(format!("bad row: {line}")));
        }
        for f in &fields[1..] {
            positions.push(f.trim().parse().map_err(|_| parse_err(format!("bad number: {f}")))?);
        }
    }
    ParticleEnsemble::new(dim, positions, time)
}

pub fn read_grid_csv(input: impl BufRead) -> Result<GridDensity> {
    let mut domain = None;
    let mut values = vec![];
    for line in input.lines() {
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if let Some(rest) = line.strip_prefix("# domain,") {
            let mut it = rest.split(',').map(|s| s.trim().parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => domain = Some((a, b)),
                _ => return Err(parse_err("bad domain line")),
            }
            continue;
        }
        if line.starts_with('#') || line.starts_with("cell") || line.trim().is_empty() {
            continue;
        }
        let v = line
            .rsplit(',')
            .next()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err(format!("bad row: {line}")))?;
        values.push(v);
    }
    let (lo, hi) = domain.ok_or_else(|| parse_err("missing domain line"))?;
    GridDensity::new(lo, hi, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sample_gaussian_examples() {
        let e = sample_gaussian(&GaussianState::new(0.0, 0.1).unwrap(), 100_000, 1).unwrap();
        let m = barycenter(&e)[0];
        let var = second_moment(&e) - m * m;
        assert!((var - 0.1).abs() < 0.005, "{var}");
        let again = sample_gaussian(&GaussianState::new(0.0, 0.1).unwrap(), 100_000, 1).unwrap();
        assert_eq!(e, again);
        let e = sample_gaussian(&GaussianState::new(5.0, 1.0).unwrap(), 100_000, 2).unwrap();
        assert!((barycenter(&e)[0] - 5.0).abs() < 0.01);
        assert!(sample_gaussian(&GaussianState::new(0.0, 1.0).unwrap(), 1, 0).is_err());
    }

    #[test]
    fn moments_by_hand() {
        let e = ParticleEnsemble::new(1, vec![1.0, 2.0, 3.0], 0.0).unwrap();
        assert_relative_eq!(barycenter(&e)[0], 2.0);
        assert_relative_eq!(second_moment(&e), 14.0 / 3.0);
        let e = ParticleEnsemble::new(1, vec![-1.0, 1.0], 0.0).unwrap();
        assert_eq!(barycenter(&e)[0], 0.0);
    }

    #[test]
    fn gaussian_grid_examples() {
        let g = GaussianState::new(0.0, 1.0).unwrap();
        let p = gaussian_density_on_grid(&g, -10.0, 10.0, 4096).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12);
        let peak = p.values().iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(peak, 0.398_942_280_401_432_7, max_relative = 1e-4);
        let var = second_moment(&p) - barycenter(&p)[0].powi(2);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
        let g = GaussianState::new(0.7, 0.3).unwrap();
        let (lo, hi) = default_gaussian_domain(&g);
        let p = gaussian_density_on_grid(&g, lo, hi, 2048).unwrap();
        assert_relative_eq!(barycenter(&p)[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(second_moment(&p), 0.49 + 0.3, max_relative = 1e-5);
        assert!(matches!(
            gaussian_density_on_grid(&g, -1.0, 1.0, 100),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn kde_examples() {
        let e = ParticleEnsemble::new(1, vec![-0.01, 0.0, 0.01], 0.0).unwrap();
        let p = density_from_ensemble(&e, -5.0, 5.0, 201, 1.0).unwrap();
        let argmax = (0..p.cells()).max_by(|a, b| p.values()[*a].total_cmp(&p.values()[*b])).unwrap();
        assert_relative_eq!(p.midpoint(argmax), 0.0, epsilon = 1e-12);
        assert!((p.mass() - 1.0).abs() < 1e-12);

        let g = GaussianState::new(0.0, 1.0).unwrap();
        let e = sample_gaussian(&g, 100_000, 5).unwrap();
        let h = silverman_bandwidth(&e);
        let p = density_from_ensemble(&e, -8.0, 8.0, 1024, h).unwrap();
        let exact = gaussian_density_on_grid(&g, -8.0, 8.0, 1024).unwrap();
        assert!(p.l1_distance(&exact).unwrap() < 0.02);

        let far = ParticleEnsemble::new(1, vec![0.0, 0.1, 9.0], 0.0).unwrap();
        assert!(matches!(density_from_ensemble(&far, -1.0, 1.0, 10, 0.1), Err(Error::Coverage { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let e = ParticleEnsemble::new(2, vec![0.1, -0.2, 1.0 / 3.0, 7.5], 0.25).unwrap();
        let mut buf = vec![];
        write_ensemble_csv(&mut buf, &e, &["hello".into()]).unwrap();
        assert_eq!(read_ensemble_csv(&buf[..]).unwrap(), e);

        let p = GridDensity::new(-1.0, 2.0, vec![0.5, 1.0, 2.0, 0.0]).unwrap();
        let mut buf = vec![];
        write_grid_csv(&mut buf, &p, &[]).unwrap();
        let q = read_grid_csv(&buf[..]).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn grid_sampling_matches_moments() {
        let g = GaussianState::new(0.3, 0.5).unwrap();
        let p = gaussian_density_on_grid(&g, -6.0, 6.0, 1200).unwrap();
        let e = sample_grid(&p, 50_000, 3).unwrap();
        assert!((barycenter(&e)[0] - 0.3).abs() < 0.015);
    }
}
