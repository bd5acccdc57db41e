//! Closed-form reference values for the Gaussian examples.
//!
//! Two linear-Gaussian systems share one marginal law: the Ornstein–Uhlenbeck
//! process (`V = x^2/2`, `W = 0`) and the self-interacting diffusion
//! (`V = 0`, `W = x^2/2`) started from a centered normal. Their variance,
//! expected cumulative Fisher information and the Gaussian transport and
//! entropy algebra used by the inequality checks live here.

use serde::{Deserialize, Serialize};

/// `1 + e^{-2t} (sigma0^2 - 1)`.
pub fn ou_variance(t: f64, sigma0_sq: f64) -> f64 {
    1.0 + (-2.0 * t).exp() * (sigma0_sq - 1.0)
}

/// Variance at time `t` under `V = kv x^2/2`, `W = kw x^2/2` (kappa = kv + kw).
pub fn gaussian_variance(t: f64, var0: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        var0 + 2.0 * t
    } else {
        1.0 / kappa + (-2.0 * kappa * t).exp() * (var0 - 1.0 / kappa)
    }
}

/// Mean at time `t` under `V = kv x^2/2`; the interaction leaves it unchanged.
pub fn gaussian_mean(t: f64, mean0: f64, kv: f64) -> f64 {
    mean0 * (-kv * t).exp()
}

/// Pathwise Fisher integrand of the linear example, `(1 - 1/s^2)^2 x^2`.
pub fn ou_integrand(x: f64, sigma_sq: f64) -> f64 {
    let c = 1.0 - 1.0 / sigma_sq;
    c * c * x * x
}

/// Pathwise Fisher integrand of the self-interacting example.
pub fn nl_integrand(x: f64, sigma_sq: f64) -> f64 {
    nl_coefficient(sigma_sq) * x * x + 0.5 * sigma_sq - 1.0
}

fn nl_coefficient(sigma_sq: f64) -> f64 {
    1.0 / (sigma_sq * sigma_sq) + 0.5 - 1.0 / sigma_sq
}

/// `x^2` at which the self-interacting integrand changes sign.
pub fn nl_sign_threshold(sigma_sq: f64) -> f64 {
    (1.0 - 0.5 * sigma_sq) / nl_coefficient(sigma_sq)
}

/// `int_{t1}^{t2} sigma_t^2 dt` in closed form.
pub fn integral_variance(t1: f64, t2: f64, sigma0_sq: f64) -> f64 {
    let a = sigma0_sq - 1.0;
    (t2 - t1) - 0.5 * a * ((-2.0 * t2).exp() - (-2.0 * t1).exp())
}

/// `int_{t1}^{t2} dt / sigma_t^2`, using `1/sigma_t^2 = e^{2t} / (e^{2t} + a)`.
pub fn integral_inverse_variance(t1: f64, t2: f64, sigma0_sq: f64) -> f64 {
    // ln((e^{2 t2} + a) / (e^{2 t1} + a)) = 2 (t2 - t1) + ln(sigma_{t2}^2 / sigma_{t1}^2)
    (t2 - t1) + 0.5 * (ou_variance(t2, sigma0_sq) / ou_variance(t1, sigma0_sq)).ln()
}

/// Expected cumulative Fisher information of the time-reversed process,
/// `int_0^s (sigma_{T-u} - 1/sigma_{T-u})^2 du`.
pub fn expected_dissipation(s: f64, sigma0_sq: f64, horizon: f64) -> f64 {
    let (t1, t2) = (horizon - s, horizon);
    integral_variance(t1, t2, sigma0_sq) - 2.0 * (t2 - t1) + integral_inverse_variance(t1, t2, sigma0_sq)
}

/// Relative-entropy drop `H(0) - H(t)` of the linear example (same integral, forward time).
pub fn entropy_drop(t: f64, sigma0_sq: f64) -> f64 {
    integral_variance(0.0, t, sigma0_sq) - 2.0 * t + integral_inverse_variance(0.0, t, sigma0_sq)
}

/// A tabulated reference curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub source: String,
}

impl OraclePath {
    pub fn variance(times: &[f64], sigma0_sq: f64) -> Self {
        Self {
            times: times.to_vec(),
            values: times.iter().map(|t| ou_variance(*t, sigma0_sq)).collect(),
            source: "closed-form variance".into(),
        }
    }

    pub fn expected_dissipation(times: &[f64], sigma0_sq: f64, horizon: f64) -> Self {
        Self {
            times: times.to_vec(),
            values: times
                .iter()
                .map(|s| expected_dissipation(*s, sigma0_sq, horizon))
                .collect(),
            source: "closed-form expected cumulative Fisher information".into(),
        }
    }
}

/// Every term of the entropy–transport inequality for a pair of normals under
/// `V = kv x^2/2`, `W = kw x^2/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHwbiTerms {
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
}

/// `(U, V, W)` energies of `N(m, s^2)`.
pub fn gaussian_energies(m: f64, s: f64, kv: f64, kw: f64) -> (f64, f64, f64) {
    let internal = -0.5 * (std::f64::consts::TAU * std::f64::consts::E * s * s).ln();
    let potential = 0.5 * kv * (m * m + s * s);
    let interaction = 0.5 * kw * s * s;
    (internal, potential, interaction)
}

pub fn gaussian_w2(m0: f64, s0: f64, m1: f64, s1: f64) -> f64 {
    ((m0 - m1).powi(2) + (s0 - s1).powi(2)).sqrt()
}

pub fn gaussian_hwbi_sides(m0: f64, s0: f64, m1: f64, s1: f64, kv: f64, kw: f64) -> GaussianHwbiTerms {
    let total = |m: f64, s: f64| {
        let (u, v, w) = gaussian_energies(m, s, kv, kw);
        u + v + w
    };
    let kappa = kv + kw;
    let f0 = total(m0, s0);
    let f1 = total(m1, s1);
    // grad log r0 = -(x - m0)/s0^2 + kv x + kw (x - m0), transport map x -> m1 + s1/s0 (x - m0)
    let derivative = (kappa * s0 * s0 - 1.0) * (s1 / s0 - 1.0) + kv * m0 * (m1 - m0);
    let fisher = (kappa - 1.0 / (s0 * s0)).powi(2) * s0 * s0 + kv * kv * m0 * m0;
    let w2 = gaussian_w2(m0, s0, m1, s1);
    let bary = (m0 - m1).powi(2);
    let term_derivative = -derivative;
    let term_w2 = -0.5 * kappa * w2 * w2;
    let term_bary = 0.5 * kw * bary;
    let rhs = term_derivative + term_w2 + term_bary;
    let lhs = f0 - f1;
    GaussianHwbiTerms {
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
        cauchy_schwarz_rhs: fisher.sqrt() * w2,
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// Expected dissipation recomputed by adaptive quadrature of the integrand.
pub fn expected_dissipation_quadrature(s: f64, sigma0_sq: f64, horizon: f64, tol: f64) -> f64 {
    let f = |u: f64| {
        let v = ou_variance(horizon - u, sigma0_sq);
        v - 2.0 + 1.0 / v
    };
    adaptive_simpson(&f, 0.0, s, tol)
}
