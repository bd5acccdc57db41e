//! Run configuration: a TOML document with five flat sections.
//!
//! Every key has a default, unknown keys are rejected, and the seed is the
//! only value that must be supplied (in the file or on the command line)
//! before a simulation command runs.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mfentropy_core::mckv_sim::{Scheme, ScoreChoice};
use mfentropy_core::potentials::{CompactBump, GaussianBump};
use mfentropy_core::{InteractionSpec, PerturbationSpec, Potential, PotentialSpec, Potentials};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub potentials: PotentialsSection,
    pub simulation: SimulationSection,
    pub pde: PdeSection,
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
}

/// Potentials by catalog name plus a flat parameter list.
///
/// Catalog: `zero` (no parameters), `quadratic` (`kappa`),
/// `quadratic_bump` (`kappa, amplitude, width`), `polynomial`
/// (coefficients, lowest degree first). Gaussian bumps listed as triples
/// `amplitude, center, width` in `*_bumps` are added to either entry. The
/// perturbation is `none` or `mollifier` with parameters in triples
/// `amplitude, center, radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialsSection {
    pub confinement: String,
    pub confinement_params: Vec<f64>,
    pub confinement_bumps: Vec<f64>,
    pub interaction: String,
    pub interaction_params: Vec<f64>,
    pub interaction_bumps: Vec<f64>,
    pub perturbation: String,
    pub perturbation_params: Vec<f64>,
    /// Time at which the perturbation switches on.
    pub activation_time: f64,
}

impl Default for PotentialsSection {
    fn default() -> Self {
        Self {
            confinement: "quadratic".into(),
            confinement_params: vec![1.0],
            confinement_bumps: vec![],
            interaction: "zero".into(),
            interaction_params: vec![],
            interaction_bumps: vec![],
            perturbation: "none".into(),
            perturbation_params: vec![],
            activation_time: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    /// Exact sampler when the potentials admit one, Euler–Maruyama otherwise.
    Auto,
    EulerMaruyama,
    ExactOu,
    ExactNl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub seed: Option<u64>,
    pub particles: usize,
    pub horizon: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub scheme: SchemeChoice,
    pub score: ScoreChoice,
    pub initial_mean: f64,
    pub initial_variance: f64,
    /// Number of individual trajectories written out.
    pub trajectories: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            seed: None,
            particles: 100_000,
            horizon: 1.0,
            dt: 1e-3,
            record_stride: 10,
            scheme: SchemeChoice::Auto,
            score: ScoreChoice::Auto,
            initial_mean: 0.0,
            initial_variance: 0.1,
            trajectories: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    pub horizon: f64,
    /// Explicit step; when absent the stable step times `stability` is used.
    pub dt: Option<f64>,
    pub stability: f64,
    /// Steps between stored snapshots (of the coarse run when refining).
    pub snapshot_stride: usize,
    /// Repeat the run with both steps halved and require the residual to halve.
    pub refine: bool,
    pub initial_mean: f64,
    pub initial_variance: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            lo: -6.0,
            hi: 6.0,
            cells: 2048,
            horizon: 1.0,
            dt: None,
            stability: 0.98,
            snapshot_stride: 100,
            refine: true,
            initial_mean: 0.5,
            initial_variance: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    /// Reversed times at which ensemble means are compared with the oracle.
    pub probe_times: Vec<f64>,
    pub linear_tolerance: f64,
    pub interacting_tolerance: f64,
    pub dissipation_tolerance: f64,
    pub martingale_t_limit: f64,
    pub qv_band: [f64; 2],
    pub bump_count: usize,
    pub bump_seed: u64,
    pub slope_tolerance: f64,
    pub metric_time: f64,
    pub metric_step: f64,
    pub metric_tolerance: f64,
    pub hwbi_cases: usize,
    pub hwbi_seed: u64,
    pub hwbi_cells: usize,
    pub bimodal_cases: usize,
    pub bimodal_seed: u64,
    pub margin_tolerance: f64,
    pub term_tolerance: f64,
    pub identity_tolerance: f64,
    pub oracle_variance: f64,
    pub oracle_time: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            probe_times: vec![0.25, 0.5, 1.0],
            linear_tolerance: 0.01,
            interacting_tolerance: 0.015,
            dissipation_tolerance: 1e-3,
            martingale_t_limit: 4.0,
            qv_band: [0.9, 1.1],
            bump_count: 20,
            bump_seed: 5,
            slope_tolerance: 1e-8,
            metric_time: 0.0,
            metric_step: 1e-3,
            metric_tolerance: 0.02,
            hwbi_cases: 100,
            hwbi_seed: 2024,
            hwbi_cells: 2048,
            bimodal_cases: 20,
            bimodal_seed: 77,
            margin_tolerance: 1e-6,
            term_tolerance: 1e-3,
            identity_tolerance: 1e-6,
            oracle_variance: 0.1,
            oracle_time: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into(), svg: false }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, excluding the `[output]` section
    /// so that where results are written does not change their headers.
    pub fn hash(&self) -> String {
        let core = RunConfig { output: OutputSection::default(), ..self.clone() };
        hex::encode(Sha256::digest(core.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.potentials()?;
        let s = &self.simulation;
        positive("simulation.particles", s.particles as f64)?;
        positive("simulation.horizon", s.horizon)?;
        positive("simulation.dt", s.dt)?;
        positive("simulation.record_stride", s.record_stride as f64)?;
        positive("simulation.initial_variance", s.initial_variance)?;
        if s.dt > s.horizon {
            bail!("simulation.dt: must not exceed simulation.horizon");
        }
        if s.trajectories > s.particles {
            bail!("simulation.trajectories: exceeds simulation.particles");
        }
        let p = &self.pde;
        if !(p.hi > p.lo) {
            bail!("pde.hi: must exceed pde.lo");
        }
        if p.cells < 8 {
            bail!("pde.cells: need at least 8 cells");
        }
        positive("pde.horizon", p.horizon)?;
        positive("pde.initial_variance", p.initial_variance)?;
        positive("pde.snapshot_stride", p.snapshot_stride as f64)?;
        if !(p.stability > 0.0 && p.stability <= 1.0) {
            bail!("pde.stability: must lie in (0, 1]");
        }
        if let Some(dt) = p.dt {
            positive("pde.dt", dt)?;
        }
        let d = &self.diagnostics;
        if d.probe_times.iter().any(|t| !(*t >= 0.0 && *t <= s.horizon)) {
            bail!("diagnostics.probe_times: every probe must lie in [0, simulation.horizon]");
        }
        if !(d.qv_band[0] < d.qv_band[1]) {
            bail!("diagnostics.qv_band: lower bound must be below upper bound");
        }
        positive("diagnostics.metric_step", d.metric_step)?;
        positive("diagnostics.hwbi_cells", d.hwbi_cells as f64)?;
        positive("diagnostics.oracle_variance", d.oracle_variance)?;
        if self.output.dir.is_empty() {
            bail!("output.dir: must not be empty");
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.simulation
            .seed
            .ok_or_else(|| anyhow!("simulation.seed: required for this command (set it in the config or pass --seed)"))
    }

    pub fn potentials(&self) -> Result<Potentials> {
        let p = &self.potentials;
        let v = catalog("potentials.confinement", &p.confinement, &p.confinement_params, &p.confinement_bumps)?;
        let v = PotentialSpec::new(v).map_err(|e| anyhow!("potentials.confinement: {e}"))?;
        let w = catalog("potentials.interaction", &p.interaction, &p.interaction_params, &p.interaction_bumps)?;
        let w = InteractionSpec::new(w).map_err(|e| anyhow!("potentials.interaction: {e}"))?;
        let mut out = Potentials::new(v, w);
        if let Some(beta) = self.perturbation()? {
            out = out.with_perturbation(beta);
        }
        Ok(out)
    }

    pub fn perturbation(&self) -> Result<Option<PerturbationSpec>> {
        let p = &self.potentials;
        match p.perturbation.as_str() {
            "none" => {
                if !p.perturbation_params.is_empty() {
                    bail!("potentials.perturbation_params: `none` takes no parameters");
                }
                Ok(None)
            }
            "mollifier" => {
                if p.perturbation_params.is_empty() || !p.perturbation_params.len().is_multiple_of(3) {
                    bail!("potentials.perturbation_params: expected triples amplitude, center, radius");
                }
                let bumps = p
                    .perturbation_params
                    .chunks(3)
                    .map(|c| CompactBump::mollifier(c[0], c[1], c[2]))
                    .collect();
                let beta = PerturbationSpec::new(bumps).map_err(|e| anyhow!("potentials.perturbation_params: {e}"))?;
                Ok(Some(beta))
            }
            other => bail!("potentials.perturbation: unknown entry `{other}` (expected none or mollifier)"),
        }
    }

    pub fn scheme(&self, potentials: &Potentials) -> Scheme {
        match self.simulation.scheme {
            SchemeChoice::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeChoice::ExactOu => Scheme::ExactOu,
            SchemeChoice::ExactNl => Scheme::ExactNl,
            SchemeChoice::Auto => {
                let v = potentials.confinement.potential.pure_quadratic();
                let w_zero = potentials.interaction.potential().is_zero();
                if potentials.active_perturbation().is_none() && v == Some(1.0) && w_zero {
                    Scheme::ExactOu
                } else {
                    Scheme::EulerMaruyama
                }
            }
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        bail!("{field}: must be positive and finite, got {v}");
    }
    Ok(())
}

fn catalog(field: &str, name: &str, params: &[f64], extra_bumps: &[f64]) -> Result<Potential> {
    let arity = |n: usize| -> Result<()> {
        if params.len() != n {
            bail!("{field}_params: `{name}` takes {n} parameter(s), got {}", params.len());
        }
        Ok(())
    };
    let pot = match name {
        "zero" => {
            arity(0)?;
            Potential::zero()
        }
        "quadratic" => {
            arity(1)?;
            Potential::quadratic(params[0])
        }
        "quadratic_bump" => {
            arity(3)?;
            Potential::polynomial_bumps(
                vec![0.0, 0.0, 0.5 * params[0]],
                vec![GaussianBump { amplitude: params[1], center: 0.0, width: params[2] }],
            )
        }
        "polynomial" => {
            if params.is_empty() {
                bail!("{field}_params: `polynomial` needs at least one coefficient");
            }
            Potential::polynomial_bumps(params.to_vec(), vec![])
        }
        other => bail!("{field}: unknown entry `{other}` (expected zero, quadratic, quadratic_bump or polynomial)"),
    };
    if extra_bumps.len() % 3 != 0 {
        bail!("{field}_bumps: expected triples amplitude, center, width");
    }
    let mut pot = pot;
    pot.bumps.extend(
        extra_bumps
            .chunks(3)
            .map(|c| GaussianBump { amplitude: c[0], center: c[1], width: c[2] }),
    );
    pot.validate().map_err(|e| anyhow!("{field}: {e}"))?;
    Ok(pot)
}
