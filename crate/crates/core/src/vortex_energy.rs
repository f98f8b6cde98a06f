//! Kinetic energy of a vortex filament carried by a sampled path and smeared
//! by a signed measure `rho`.
//!
//! Fourier convention: `rho^(q) = int exp(-i <q, x>) rho(dx)` without a `2 pi`
//! prefactor, so that `int f = (2 pi)^-3 int f^` in three dimensions. All such
//! factors are collected in [`consts`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::current_functionals::{pair_time_integral, z_matrix, Atom, BoundaryPolicy, SpatialGrid};
use crate::error::{invalid, Error, Result};
use crate::gaussian_paths::{discrete_derivative, sample_fbm, DerivScheme, FbmParams, FbmPath, SchemeKind};
use crate::mc::MCResult;
use crate::quadrature::{gauss_legendre, Integrator};
use crate::rng::derive_seed;

/// Normalizations tied to the Fourier convention.
pub mod consts {
    use std::f64::consts::PI;

    /// `(2 pi)^-3`, inverse-transform factor in three dimensions
    pub const INV_TWO_PI_CUBED: f64 = 1.0 / (8.0 * PI * PI * PI);
    /// `int_{S^2} dOmega`
    pub const SPHERE_AREA: f64 = 4.0 * PI;
    /// Biot–Savart prefactor `1 / (4 pi)`
    pub const BIOT_SAVART: f64 = 1.0 / (4.0 * PI);
}

/// `K(x) = x / (4 pi |x|^3)`.
pub fn biot_savart(x: [f64; 3]) -> Result<[f64; 3]> {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    if r2 == 0.0 {
        return Err(invalid("x", "the Biot–Savart kernel is singular at the origin"));
    }
    let f = consts::BIOT_SAVART / (r2 * r2.sqrt());
    Ok([f * x[0], f * x[1], f * x[2]])
}

/// Leading behavior of a tabulated profile, needed to decide the
/// finiteness conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymptotes {
    /// `|rho^(q)| ~ q^k` as `q -> 0`
    pub origin_exponent: f64,
    /// `|rho^(q)| <= C q^-p` as `q -> inf`; `None` means faster than any power
    pub infinity_exponent: Option<f64>,
}

/// A radially symmetric density tabulated on increasing radii (linear
/// interpolation, zero beyond the last radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedRadial {
    pub radii: Vec<f64>,
    pub density: Vec<f64>,
    pub asymptotes: Option<Asymptotes>,
}

impl TabulatedRadial {
    pub fn new(radii: Vec<f64>, density: Vec<f64>, asymptotes: Option<Asymptotes>) -> Result<Self> {
        if radii.len() < 2 || radii.len() != density.len() {
            return Err(invalid("tabulated", "need matching radii and density with at least two points"));
        }
        if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("tabulated", "radii must start at zero and increase"));
        }
        Ok(Self {
            radii,
            density,
            asymptotes,
        })
    }

    fn panels(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let (x, w) = gauss_legendre(8);
        let mut acc = 0.0;
        for k in 0..self.radii.len() - 1 {
            let (a, b) = (self.radii[k], self.radii[k + 1]);
            let (ya, yb) = (self.density[k], self.density[k + 1]);
            let h = 0.5 * (b - a);
            for (xi, wi) in x.iter().zip(&w) {
                let r = a + h * (xi + 1.0);
                let lam = (r - a) / (b - a);
                acc += h * wi * f(r, ya + lam * (yb - ya));
            }
        }
        acc
    }

    /// `4 pi int rho(r) r^2 sin(q r) / (q r) dr`
    pub fn fourier(&self, q: f64) -> f64 {
        self.panels(|r, rho| {
            let x = q * r;
            let sinc = if x.abs() < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            4.0 * PI * r * r * rho * sinc
        })
    }

    /// Mass inside the ball of radius `r`.
    pub fn enclosed_mass(&self, r: f64) -> f64 {
        let (x, w) = gauss_legendre(8);
        let mut acc = 0.0;
        for k in 0..self.radii.len() - 1 {
            let (a, b) = (self.radii[k], self.radii[k + 1].min(r));
            if b <= a {
                break;
            }
            let (ya, yb) = (self.density[k], self.density[k + 1]);
            let full = self.radii[k + 1] - self.radii[k];
            let h = 0.5 * (b - a);
            for (xi, wi) in x.iter().zip(&w) {
                let s = a + h * (xi + 1.0);
                let rho = ya + (s - a) / full * (yb - ya);
                acc += h * wi * 4.0 * PI * s * s * rho;
            }
        }
        acc
    }

    pub fn support_radius(&self) -> f64 {
        *self.radii.last().expect("non-empty")
    }
}

/// Signed measure smearing the filament.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMeasure {
    /// `mass` times the centered normal law with covariance `sigma^2 I`
    Gaussian { sigma: f64, mass: f64 },
    /// `N(0, sigma1^2 I) - N(0, sigma2^2 I)`
    Dipole { sigma1: f64, sigma2: f64 },
    Tabulated(TabulatedRadial),
}

impl SpectralMeasure {
    pub fn gaussian(sigma: f64) -> Self {
        Self::Gaussian { sigma, mass: 1.0 }
    }

    pub fn dipole(sigma1: f64, sigma2: f64) -> Self {
        Self::Dipole { sigma1, sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Gaussian { sigma, mass } => {
                if !(*sigma > 0.0) || !mass.is_finite() {
                    return Err(invalid("measure", "gaussian needs sigma > 0 and a finite mass"));
                }
            }
            Self::Dipole { sigma1, sigma2 } => {
                if !(*sigma1 > 0.0 && *sigma2 > 0.0) {
                    return Err(invalid("measure", "dipole widths must be positive"));
                }
            }
            Self::Tabulated(_) => {}
        }
        Ok(())
    }

    /// Gaussian components `(weight, sigma)` when the measure is a mixture.
    pub fn mixture(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::Gaussian { sigma, mass } => Some(vec![(mass, sigma)]),
            Self::Dipole { sigma1, sigma2 } => Some(vec![(1.0, sigma1), (-1.0, sigma2)]),
            Self::Tabulated(_) => None,
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Self::Tabulated(t) => t.enclosed_mass(t.support_radius()),
            _ => self.mixture().expect("mixture").iter().map(|c| c.0).sum(),
        }
    }

    /// `|rho|(R^3)`
    pub fn abs_mass(&self) -> f64 {
        match self {
            Self::Tabulated(t) => t.panels(|r, rho| 4.0 * PI * r * r * rho.abs()),
            _ => self.mixture().expect("mixture").iter().map(|c| c.0.abs()).sum(),
        }
    }

    /// `rho^(q)`, real by radial symmetry.
    pub fn fourier(&self, q: f64) -> f64 {
        match self {
            Self::Tabulated(t) => t.fourier(q),
            _ => self
                .mixture()
                .expect("mixture")
                .iter()
                .map(|&(w, s)| w * (-0.5 * s * s * q * q).exp())
                .sum(),
        }
    }

    /// `|rho^(q)|^2 = sum_{k,l} w_k w_l exp(-s_kl^2 q^2)` for mixtures.
    fn autocorrelation_terms(&self) -> Option<Vec<(f64, f64)>> {
        let m = self.mixture()?;
        let mut out = Vec::with_capacity(m.len() * m.len());
        for &(wk, sk) in &m {
            for &(wl, sl) in &m {
                out.push((wk * wl, (0.5 * (sk * sk + sl * sl)).sqrt()));
            }
        }
        Some(out)
    }

    fn asymptotes(&self) -> Option<Asymptotes> {
        match self {
            Self::Gaussian { mass, .. } => Some(Asymptotes {
                origin_exponent: if *mass == 0.0 { f64::INFINITY } else { 0.0 },
                infinity_exponent: None,
            }),
            Self::Dipole { sigma1, sigma2 } => Some(Asymptotes {
                origin_exponent: if sigma1 == sigma2 { f64::INFINITY } else { 2.0 },
                infinity_exponent: None,
            }),
            Self::Tabulated(t) => t.asymptotes,
        }
    }

    /// Width beyond which the smeared field is Coulombic.
    pub fn core_radius(&self) -> f64 {
        match self {
            Self::Tabulated(t) => t.support_radius(),
            _ => self.mixture().expect("mixture").iter().map(|c| c.1).fold(0.0, f64::max),
        }
    }

    /// `(K * rho)(y)` as a radial factor `F(r)` with `(K * rho)(y) = F(|y|) y`.
    fn smeared_field_factor(&self, r: f64) -> f64 {
        let coulomb = consts::BIOT_SAVART / (r * r * r);
        match self {
            Self::Tabulated(t) => coulomb * t.enclosed_mass(r),
            _ => {
                let mut acc = 0.0;
                for (w, s) in self.mixture().expect("mixture") {
                    acc += w * gaussian_enclosed_fraction(r, s, coulomb);
                }
                acc
            }
        }
    }
}

/// Fraction of a centered normal law (covariance `s^2 I`) inside the ball of
/// radius `r`, times `coulomb = 1/(4 pi r^3)`; the small-`r` branch avoids
/// cancellation and yields the finite limit `1/(3 (2 pi)^(3/2) s^3)`.
fn gaussian_enclosed_fraction(r: f64, s: f64, coulomb: f64) -> f64 {
    let x = r / s;
    if x < 1e-3 {
        let c = 1.0 / (3.0 * (2.0 * PI).powf(1.5) * s * s * s);
        return c * (1.0 - 0.3 * x * x);
    }
    let frac = erf(x / 2f64.sqrt()) - (2.0 / PI).sqrt() * x * (-0.5 * x * x).exp();
    coulomb * frac
}

/// `g^(q) = (|rho^(q)|^2 / |q|^2) (I - q q^T / |q|^2)`.
pub fn fourier_kernel(measure: &SpectralMeasure, q: [f64; 3]) -> Result<[[f64; 3]; 3]> {
    let q2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2];
    if q2 == 0.0 {
        return Err(invalid("q", "the kernel is evaluated at q != 0"));
    }
    let amp = measure.fourier(q2.sqrt()).powi(2) / q2;
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[i][j] = amp * (delta - q[i] * q[j] / q2);
        }
    }
    Ok(m)
}

/// Real-space kernel of a Gaussian autocorrelation term `exp(-s^2 |q|^2)`:
/// `g(x) = (phi + P/r) I - (phi + 3 P/r) x^ x^T` with the potential
/// `phi(r) = erf(r / 2s) / (4 pi r)` and `P = -(1/r^2) int_0^r phi(u) u^2 du`.
/// Returns `(a, b)` with `g = a I - b x x^T`.
fn gaussian_g_coefficients(r: f64, s: f64) -> (f64, f64) {
    let a = 2.0 * s;
    let x = r / a;
    if x < 1e-2 {
        // series in x; the direct form cancels to O(x^2) here
        let phi0 = 1.0 / (2.0 * PI.powf(1.5) * a);
        let x2 = x * x;
        let phi = phi0 * (1.0 - x2 / 3.0 + x2 * x2 / 10.0);
        let p_over_r = -phi0 * (1.0 / 3.0 - x2 / 15.0 + x2 * x2 / 70.0);
        let b = phi0 * (-2.0 / 15.0 + 2.0 * x2 / 35.0) / (a * a);
        return (phi + p_over_r, b);
    }
    let e = erf(x);
    let phi = e / (4.0 * PI * r);
    let integral = (0.5 * r * r - 0.25 * a * a) * e + a * r / (2.0 * PI.sqrt()) * (-x * x).exp();
    let p_over_r = -integral / (4.0 * PI * r * r * r);
    (phi + p_over_r, (phi + 3.0 * p_over_r) / (r * r))
}

/// `g(x)` as a row-major 3x3 matrix for mixtures.
pub fn real_space_kernel(measure: &SpectralMeasure, x: &[f64], out: &mut [f64]) -> Result<()> {
    let terms = measure
        .autocorrelation_terms()
        .ok_or_else(|| invalid("measure", "closed-form kernel available for Gaussian mixtures only"))?;
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let (mut ca, mut cb) = (0.0, 0.0);
    for (w, s) in terms {
        let (a, b) = gaussian_g_coefficients(r, s);
        ca += w * a;
        cb += w * b;
    }
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = if i == j { ca } else { 0.0 } - cb * x[i] * x[j];
        }
    }
    Ok(())
}

/// Result of a finiteness check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "value")]
pub enum Finiteness {
    Finite(f64),
    Divergent,
    Undecidable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    /// `sup_q |rho^(q)| |q|^-1 (1 + |q|^2)^(alpha/2) < inf`
    pub sobolev_condition: Option<bool>,
    /// largest sampled value of the Sobolev profile
    pub sobolev_witness: f64,
    /// `int |rho^(q)|^2 |q|^(1/H - 4) dq`
    pub spectral_integral: Finiteness,
}

/// `4 pi int_0^inf f(q) q^2 dq` for a radial `f` that decays by `q_max`,
/// in the variable `ln q`, with a power-law correction below `e^-40`.
fn radial_q_integral(f: impl Fn(f64) -> f64, small_q_power: f64, q_max: f64) -> f64 {
    let lo = -40.0;
    let hi = q_max.ln();
    let g = |v: f64| {
        let q = v.exp();
        4.0 * PI * f(q) * q * q * q
    };
    let mut pts = vec![lo, -10.0, -3.0, -1.0, 0.0, 1.0, 2.0, hi];
    pts.retain(|&p| p <= hi);
    pts.push(hi);
    pts.dedup();
    let body = Integrator::new(1e-11).with_abs_tol(1e-300).with_max_panels(2000).integrate_breaks(g, &pts);
    let corr = if small_q_power > 0.0 { g(lo) / small_q_power } else { 0.0 };
    body.value + corr
}

pub fn check_conditions(measure: &SpectralMeasure, hurst: f64, alpha: f64) -> Result<ConditionReport> {
    measure.validate()?;
    if !(hurst > 0.25 && hurst < 1.0) {
        return Err(invalid("hurst", "H must lie in (1/4, 1)"));
    }
    let q_max = 60.0 / measure.core_radius().max(1e-3);
    let profile = |q: f64| measure.fourier(q).abs() / q * (1.0 + q * q).powf(0.5 * alpha);
    let sobolev_witness = (0..=400)
        .map(|i| 10f64.powf(-6.0 + 9.0 * i as f64 / 400.0))
        .filter(|&q| q <= q_max)
        .map(profile)
        .fold(0.0, f64::max);
    let asym = measure.asymptotes();
    let sobolev_condition = asym.map(|a| {
        let origin_ok = a.origin_exponent >= 1.0;
        let infinity_ok = match a.infinity_exponent {
            None => true,
            Some(p) => p >= alpha - 1.0,
        };
        origin_ok && infinity_ok
    });
    let beta = 1.0 / hurst - 4.0;
    let spectral_integral = match asym {
        None => Finiteness::Undecidable,
        Some(a) => {
            // integrand of the radial form ~ q^(2k + beta + 2) at the origin
            let origin = 2.0 * a.origin_exponent + beta + 2.0;
            let infinity_ok = match a.infinity_exponent {
                None => true,
                Some(p) => -2.0 * p + beta + 2.0 < -1.0,
            };
            if origin <= -1.0 || !infinity_ok {
                Finiteness::Divergent
            } else {
                let power = if origin.is_finite() { origin + 1.0 } else { 0.0 };
                Finiteness::Finite(radial_q_integral(
                    |q| measure.fourier(q).powi(2) * q.powf(beta),
                    power,
                    q_max,
                ))
            }
        }
    };
    Ok(ConditionReport {
        sobolev_condition,
        sobolev_witness,
        spectral_integral,
    })
}

/// `E Tr g(Y)` for `Y ~ N(0, sigma^2 I)`:
/// `(2 pi)^-3 int Tr g^(q) exp(-sigma^2 |q|^2 / 2) dq = pi^-2 int_0^inf |rho^(q)|^2 exp(-sigma^2 q^2 / 2) dq`.
pub fn expected_trace(measure: &SpectralMeasure, sigma: f64) -> f64 {
    let prefactor = consts::INV_TWO_PI_CUBED * 2.0 * consts::SPHERE_AREA;
    match measure.autocorrelation_terms() {
        Some(terms) => {
            // int_0^inf exp(-(s^2 + sigma^2/2) q^2) dq = sqrt(pi) / (2 sqrt(s^2 + sigma^2/2))
            let sum: f64 = terms
                .iter()
                .map(|&(w, s)| w * PI.sqrt() / (2.0 * (s * s + 0.5 * sigma * sigma).sqrt()))
                .sum();
            prefactor * sum
        }
        None => {
            let q_max = 60.0 / measure.core_radius().max(1e-3);
            let f = |q: f64| measure.fourier(q).powi(2) * (-0.5 * sigma * sigma * q * q).exp();
            prefactor * Integrator::new(1e-10).with_max_panels(2000).integrate_breaks(f, &[0.0, 1.0, 4.0, q_max]).value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyExpectation {
    pub value: f64,
    pub abs_error: f64,
    pub converged: bool,
}

/// `E energy = int int c(t, s) E Tr g(X_t - X_s) dt ds`; the second Wick term
/// vanishes because `g` is divergence free.
pub fn expected_energy_exact(
    hurst: f64,
    measure: &SpectralMeasure,
    eps: f64,
    horizon: f64,
) -> Result<EnergyExpectation> {
    let report = check_conditions(measure, hurst, 1.0)?;
    match report.spectral_integral {
        Finiteness::Divergent => {
            return Err(Error::Divergent(
                "int |rho^(q)|^2 |q|^(1/H - 4) dq diverges, so the expected energy is infinite".into(),
            ))
        }
        Finiteness::Undecidable => {
            return Err(Error::Undecidable(
                "tabulated measure lacks asymptote metadata; finiteness cannot be decided".into(),
            ))
        }
        Finiteness::Finite(_) => {}
    }
    let (value, abs_error, converged) = pair_time_integral(
        hurst,
        SchemeKind::Symmetric,
        eps,
        horizon,
        BoundaryPolicy::Truncation,
        Atom::Covariance,
        |tau| expected_trace(measure, tau.powf(hurst)),
        1e-300,
    )?;
    Ok(EnergyExpectation {
        value,
        abs_error,
        converged,
    })
}

/// Per-path energy `int int <D X_t, g(X_t - X_s) D X_s> dt ds`, the squared
/// L2 norm of the velocity by Parseval.
pub fn path_energy(path: &FbmPath, measure: &SpectralMeasure, scheme: DerivScheme) -> Result<f64> {
    if path.dim() != 3 {
        return Err(invalid("dim", "vortex filaments live in three dimensions"));
    }
    measure
        .mixture()
        .ok_or_else(|| invalid("measure", "per-path energy needs a Gaussian mixture"))?;
    z_matrix(path, scheme, BoundaryPolicy::Truncation, |x, m| {
        real_space_kernel(measure, x, m).expect("mixture checked")
    })
}

/// `(g(0) term, h term)` of the split `g(x) = g(0) - h(x)`; the energy is
/// their difference and the first equals `<J, g(0) J>` with `J = int D X dt`.
pub fn h_split(path: &FbmPath, measure: &SpectralMeasure, scheme: DerivScheme) -> Result<(f64, f64)> {
    let mut g0 = [0.0; 9];
    real_space_kernel(measure, &[0.0, 0.0, 0.0], &mut g0)?;
    let constant = z_matrix(path, scheme, BoundaryPolicy::Truncation, |_, m| m.copy_from_slice(&g0))?;
    let h = z_matrix(path, scheme, BoundaryPolicy::Truncation, |x, m| {
        real_space_kernel(measure, x, m).expect("mixture");
        for (mi, gi) in m.iter_mut().zip(&g0) {
            *mi = gi - *mi;
        }
    })?;
    Ok((constant, h))
}

/// `<v, g(0) v>` for the limit of the constant term.
pub fn g_zero_form(measure: &SpectralMeasure, v: [f64; 3]) -> Result<f64> {
    let mut g0 = [0.0; 9];
    real_space_kernel(measure, &[0.0, 0.0, 0.0], &mut g0)?;
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += v[i] * g0[i * 3 + j] * v[j];
        }
    }
    Ok(acc)
}

pub fn mc_energy(
    hurst: f64,
    measure: &SpectralMeasure,
    eps: f64,
    horizon: f64,
    steps_per_epsilon: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<MCResult> {
    if n_replicas < crate::current_functionals::MIN_MC_REPLICAS {
        return Err(Error::TooFewSamples {
            needed: crate::current_functionals::MIN_MC_REPLICAS,
            got: n_replicas,
        });
    }
    let params = crate::current_functionals::mc_path_params(hurst, 3, eps, horizon, steps_per_epsilon)?;
    let scheme = DerivScheme::symmetric(eps);
    let samples: Vec<f64> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|i| {
            let p = sample_fbm(params.with_seed(derive_seed(seed, i)))?;
            path_energy(&p, measure, scheme)
        })
        .collect::<Result<_>>()?;
    Ok(MCResult::from_samples(&samples, seed))
}

/// Velocity `u(x) = int (K * rho)(x - X_t) x D X_t dt` on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct VelocityField {
    pub grid: SpatialGrid,
    /// node-major, three components per node
    pub values: Vec<f64>,
    /// `int D X dt`, the dipole moment of the far field
    pub circulation: [f64; 3],
    pub mass: f64,
}

/// Minimum box margin in units of the core radius.
pub const MIN_VELOCITY_MARGIN: f64 = 4.0;

pub fn velocity_field(
    path: &FbmPath,
    measure: &SpectralMeasure,
    scheme: DerivScheme,
    grid: &SpatialGrid,
) -> Result<VelocityField> {
    measure.validate()?;
    if path.dim() != 3 || grid.dim() != 3 {
        return Err(invalid("dim", "vortex filaments live in three dimensions"));
    }
    let need = MIN_VELOCITY_MARGIN * measure.core_radius();
    let margin = grid.margin_for(path);
    if margin < need * (1.0 - 1e-9) {
        let widest = grid.counts.iter().max().copied().unwrap_or(1) - 1;
        let half_width = 0.5 * grid.spacing * widest as f64;
        return Err(Error::BoxTooSmall {
            half_width,
            suggested: half_width + need - margin,
        });
    }
    let deriv = discrete_derivative(path, scheme)?;
    let n = path.n_steps();
    let dt = path.step();
    let w = |k: usize| if k == 0 || k == n { 0.5 * dt } else { dt };
    let pts: Vec<[f64; 3]> = (0..=n)
        .map(|k| [path.values[0][k], path.values[1][k], path.values[2][k]])
        .collect();
    let ds: Vec<[f64; 3]> = (0..=n)
        .map(|k| {
            let wk = w(k);
            [wk * deriv.values[0][k], wk * deriv.values[1][k], wk * deriv.values[2][k]]
        })
        .collect();
    let mut circulation = [0.0; 3];
    for d in &ds {
        for i in 0..3 {
            circulation[i] += d[i];
        }
    }
    let values: Vec<f64> = (0..grid.n_nodes())
        .into_par_iter()
        .flat_map_iter(|idx| {
            let mut x = [0.0; 3];
            grid.node(idx, &mut x);
            let mut u = [0.0; 3];
            for (p, d) in pts.iter().zip(&ds) {
                let y = [x[0] - p[0], x[1] - p[1], x[2] - p[2]];
                let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                let f = measure.smeared_field_factor(r);
                u[0] += f * (y[1] * d[2] - y[2] * d[1]);
                u[1] += f * (y[2] * d[0] - y[0] * d[2]);
                u[2] += f * (y[0] * d[1] - y[1] * d[0]);
            }
            u
        })
        .collect();
    Ok(VelocityField {
        grid: grid.clone(),
        values,
        circulation,
        mass: measure.total_mass(),
    })
}

impl VelocityField {
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.values[3 * idx], self.values[3 * idx + 1], self.values[3 * idx + 2]]
    }

    /// `(grid sum, far-field tail)`. Outside the box the field is that of a
    /// point vortex segment, `|u|^2 ~ m^2 |J x w|^2 / (16 pi^2 r^4)`, whose
    /// integral beyond the box boundary is taken along rays from the box
    /// center.
    pub fn energy(&self) -> (f64, f64) {
        let body: f64 = self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume();
        let h = self.grid.spacing;
        let half: Vec<f64> = self.grid.counts.iter().map(|&c| 0.5 * h * (c - 1) as f64 + 0.5 * h).collect();
        let (ct, wt) = gauss_legendre(32);
        let nphi = 64;
        let j = self.circulation;
        let mut acc = 0.0;
        for (c, wc) in ct.iter().zip(&wt) {
            let st = (1.0 - c * c).sqrt();
            for k in 0..nphi {
                let ph = 2.0 * PI * (k as f64 + 0.5) / nphi as f64;
                let om = [st * ph.cos(), st * ph.sin(), *c];
                let rb = (0..3)
                    .map(|i| if om[i].abs() > 0.0 { half[i] / om[i].abs() } else { f64::INFINITY })
                    .fold(f64::INFINITY, f64::min);
                let cross = [
                    j[1] * om[2] - j[2] * om[1],
                    j[2] * om[0] - j[0] * om[2],
                    j[0] * om[1] - j[1] * om[0],
                ];
                let c2 = cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2];
                acc += wc * (2.0 * PI / nphi as f64) * c2 / rb;
            }
        }
        let tail = self.mass * self.mass / (16.0 * PI * PI) * acc;
        (body, tail)
    }
}

/// The smallest grid of spacing `h` whose margin around the path is
/// `margin_cores` core radii.
pub fn velocity_grid(path: &FbmPath, measure: &SpectralMeasure, margin_cores: f64, h: f64) -> SpatialGrid {
    SpatialGrid::enclosing(path, margin_cores * measure.core_radius(), h)
}

/// Ray profile `|u(c + r e)|` for a far-field decay check.
pub fn far_field_profile(
    path: &FbmPath,
    measure: &SpectralMeasure,
    scheme: DerivScheme,
    direction: [f64; 3],
    radii: &[f64],
) -> Result<Vec<f64>> {
    let deriv = discrete_derivative(path, scheme)?;
    let n = path.n_steps();
    let dt = path.step();
    let norm = (direction.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let e: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    Ok(radii
        .iter()
        .map(|&r| {
            let x = [r * e[0], r * e[1], r * e[2]];
            let mut u = [0.0; 3];
            for k in 0..=n {
                let wk = if k == 0 || k == n { 0.5 * dt } else { dt };
                let y = [x[0] - path.values[0][k], x[1] - path.values[1][k], x[2] - path.values[2][k]];
                let d = [deriv.values[0][k], deriv.values[1][k], deriv.values[2][k]];
                let rr = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                let f = wk * measure.smeared_field_factor(rr);
                u[0] += f * (y[1] * d[2] - y[2] * d[1]);
                u[1] += f * (y[2] * d[0] - y[0] * d[2]);
                u[2] += f * (y[0] * d[1] - y[1] * d[0]);
            }
            (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
        })
        .collect())
}

/// `2 pi Gamma((1/H - 1) / 2)`: the spectral integral for `|rho^|^2 = exp(-|q|^2)`.
pub fn gaussian_spectral_integral(hurst: f64) -> f64 {
    2.0 * PI * gamma((1.0 / hurst - 1.0) / 2.0)
}

/// A three-dimensional zero path, handy for degenerate checks.
pub fn zero_path(n_steps: usize, eps: f64) -> Result<FbmPath> {
    let p = FbmParams::new(0.5, 3, 1.0, n_steps, 0).padded_for(eps);
    FbmPath::from_values(p, vec![vec![0.0; p.total_nodes()]; 3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn biot_savart_values() {
        let k = biot_savart([1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(k[0], 1.0 / (4.0 * PI), max_relative = 1e-15);
        assert_eq!(k[1], 0.0);
        let x = [0.3, -0.4, 1.2];
        let a = biot_savart(x).unwrap();
        let b = biot_savart([2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]).unwrap();
        let m = biot_savart([-x[0], -x[1], -x[2]]).unwrap();
        let na = (a.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let nb = (b.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert_relative_eq!(nb, na / 4.0, max_relative = 1e-14);
        for i in 0..3 {
            assert_eq!(m[i], -a[i]);
        }
        assert!(biot_savart([0.0; 3]).is_err());
    }

    #[test]
    fn fourier_kernel_is_a_transverse_projection() {
        let m = SpectralMeasure::gaussian(1.0);
        for q in [[1.0, 0.0, 0.0], [0.3, -0.7, 2.2], [1e-3, 4.0, -0.5]] {
            let g = fourier_kernel(&m, q).unwrap();
            let q2: f64 = q.iter().map(|v| v * v).sum();
            let scale = m.fourier(q2.sqrt()).powi(2) / q2;
            for row in &g {
                let gq: f64 = row.iter().zip(&q).map(|(a, b)| a * b).sum();
                assert!(gq.abs() <= 1e-14 * scale * q2.sqrt(), "{gq}");
            }
            let tr = g[0][0] + g[1][1] + g[2][2];
            assert_relative_eq!(tr, 2.0 * scale, max_relative = 1e-14);
        }
    }

    #[test]
    fn real_space_kernel_trace_is_twice_the_potential() {
        // Tr g = 2 phi with phi(r) = erf(r / 2s) / (4 pi r)
        let m = SpectralMeasure::gaussian(0.8);
        let s = 0.8;
        let mut g = [0.0; 9];
        for r in [1e-5, 0.01, 0.5, 2.0, 7.0] {
            real_space_kernel(&m, &[r, 0.0, 0.0], &mut g).unwrap();
            let tr = g[0] + g[4] + g[8];
            let phi = if r < 1e-3 { 1.0 / (2.0 * PI.powf(1.5) * 2.0 * s) } else { erf(r / (2.0 * s)) / (4.0 * PI * r) };
            assert_relative_eq!(tr, 2.0 * phi, max_relative = 1e-6);
        }
    }

    #[test]
    fn real_space_kernel_is_divergence_free() {
        // sum_i d_i g_ik = 0, by central differences
        let m = SpectralMeasure::dipole(1.0, 2.0);
        let x0 = [0.4, -0.9, 0.7];
        let h = 1e-4;
        let mut gp = [0.0; 9];
        let mut gm = [0.0; 9];
        for k in 0..3 {
            let mut div = 0.0;
            for i in 0..3 {
                let mut xp = x0;
                let mut xm = x0;
                xp[i] += h;
                xm[i] -= h;
                real_space_kernel(&m, &xp, &mut gp).unwrap();
                real_space_kernel(&m, &xm, &mut gm).unwrap();
                div += (gp[i * 3 + k] - gm[i * 3 + k]) / (2.0 * h);
            }
            assert!(div.abs() < 1e-7, "{div}");
        }
    }

    #[test]
    fn spectral_integral_closed_form() {
        let m = SpectralMeasure::gaussian(1.0);
        for h in [0.3, 0.5, 0.8] {
            let rep = check_conditions(&m, h, 2.0).unwrap();
            match rep.spectral_integral {
                Finiteness::Finite(v) => assert_relative_eq!(v, gaussian_spectral_integral(h), max_relative = 1e-6),
                other => panic!("{other:?}"),
            }
        }
        assert_relative_eq!(gaussian_spectral_integral(0.5), 2.0 * PI * PI.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn sobolev_condition_examples() {
        let g = check_conditions(&SpectralMeasure::gaussian(1.0), 0.5, 2.0).unwrap();
        assert_eq!(g.sobolev_condition, Some(false));
        let d = check_conditions(&SpectralMeasure::dipole(1.0, 2.0), 0.5, 2.0).unwrap();
        assert_eq!(d.sobolev_condition, Some(true));
        assert!(d.sobolev_witness.is_finite());
    }

    #[test]
    fn tabulated_without_metadata_is_undecidable() {
        let radii: Vec<f64> = (0..=50).map(|k| k as f64 * 0.02).collect();
        let density: Vec<f64> = radii.iter().map(|r| 1.0 - r).collect();
        let t = TabulatedRadial::new(radii, density, None).unwrap();
        let rep = check_conditions(&SpectralMeasure::Tabulated(t), 0.5, 2.0).unwrap();
        assert_eq!(rep.spectral_integral, Finiteness::Undecidable);
        assert_eq!(rep.sobolev_condition, None);
    }

    #[test]
    fn tabulated_gaussian_matches_closed_form() {
        let s: f64 = 0.7;
        // linear interpolation on a 0.005 grid: O(h^2) ~ 1e-5 relative
        let radii: Vec<f64> = (0..=1600).map(|k| k as f64 * 0.005).collect();
        let norm = (2.0 * PI * s * s).powf(-1.5);
        let density: Vec<f64> = radii.iter().map(|r| norm * (-0.5 * r * r / (s * s)).exp()).collect();
        let t = SpectralMeasure::Tabulated(TabulatedRadial::new(radii, density, None).unwrap());
        let g = SpectralMeasure::gaussian(s);
        assert_relative_eq!(t.total_mass(), 1.0, max_relative = 2e-5);
        for q in [0.0, 0.5, 2.0] {
            assert_relative_eq!(t.fourier(q), g.fourier(q), epsilon = 2e-5);
        }
        for r in [0.3, 1.0, 3.0] {
            assert_relative_eq!(t.smeared_field_factor(r), g.smeared_field_factor(r), max_relative = 2e-5);
        }
    }

    #[test]
    fn dipole_transform_vanishes_quadratically() {
        let d = SpectralMeasure::dipole(1.0, 2.0);
        assert_eq!(d.fourier(0.0), 0.0);
        let ratio = d.fourier(1e-3) / d.fourier(2e-3);
        assert_relative_eq!(ratio, 0.25, max_relative = 1e-4);
        for q in [0.1, 1.0, 10.0] {
            assert!(d.fourier(q).abs() <= d.abs_mass());
        }
    }

    #[test]
    fn energy_is_quadratic_in_mass() {
        let a = expected_energy_exact(0.5, &SpectralMeasure::Gaussian { sigma: 1.0, mass: 1.0 }, 0.1, 1.0).unwrap();
        let b = expected_energy_exact(0.5, &SpectralMeasure::Gaussian { sigma: 1.0, mass: 2.0 }, 0.1, 1.0).unwrap();
        assert_relative_eq!(b.value, 4.0 * a.value, max_relative = 1e-9);
    }

    #[test]
    fn zero_path_has_zero_velocity() {
        let p = zero_path(40, 0.1).unwrap();
        let m = SpectralMeasure::gaussian(1.0);
        let grid = velocity_grid(&p, &m, 4.0, 1.0);
        let u = velocity_field(&p, &m, DerivScheme::symmetric(0.1), &grid).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
        assert_eq!(path_energy(&p, &m, DerivScheme::symmetric(0.1)).unwrap(), 0.0);
    }

    #[test]
    fn expected_trace_matches_quadrature() {
        let m = SpectralMeasure::dipole(0.6, 1.3);
        let sigma: f64 = 0.4;
        let direct = Integrator::new(1e-12)
            .integrate_breaks(|q| m.fourier(q).powi(2) * (-0.5 * sigma * sigma * q * q).exp(), &[0.0, 2.0, 10.0, 60.0])
            .value
            / (PI * PI);
        assert_relative_eq!(expected_trace(&m, sigma), direct, max_relative = 1e-9);
    }

    #[test]
    fn kernel_series_joins_the_closed_form() {
        // coefficients just inside and outside the series window
        let s = 0.5;
        let r = 2.0 * s * 1e-2;
        let (a1, b1) = gaussian_g_coefficients(r * (1.0 - 1e-9), s);
        let (a2, b2) = gaussian_g_coefficients(r * (1.0 + 1e-9), s);
        assert_relative_eq!(a1, a2, max_relative = 1e-9);
        assert_relative_eq!(b1, b2, max_relative = 1e-6);
    }

    fn sample_path(seed: u64) -> FbmPath {
        let params = crate::current_functionals::mc_path_params(0.5, 3, 0.05, 1.0, 4).unwrap();
        sample_fbm(params.with_seed(seed)).unwrap()
    }

    #[test]
    fn h_split_recombines_and_matches_the_circulation_form() {
        let m = SpectralMeasure::gaussian(1.0);
        let p = sample_path(3);
        let sch = DerivScheme::symmetric(0.05);
        let e = path_energy(&p, &m, sch).unwrap();
        let (c, h) = h_split(&p, &m, sch).unwrap();
        assert!((c - h - e).abs() < 1e-12 * e.abs().max(1e-300));
        let u = velocity_field(&p, &m, sch, &velocity_grid(&p, &m, 4.0, 1.0)).unwrap();
        assert_relative_eq!(c, g_zero_form(&m, u.circulation).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn far_field_decays_like_a_dipole() {
        let m = SpectralMeasure::gaussian(1.0);
        let p = sample_path(5);
        let f = far_field_profile(&p, &m, DerivScheme::symmetric(0.05), [0.3, 0.5, 0.8], &[40.0, 80.0, 160.0]).unwrap();
        for w in f.windows(2) {
            let slope = (w[1] / w[0]).ln() / 2f64.ln();
            assert!(slope <= -1.9, "{slope}");
        }
    }

    #[test]
    fn exact_energy_is_bounded_in_epsilon() {
        let m = SpectralMeasure::gaussian(1.0);
        let v: Vec<f64> = [0.2, 0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&e| expected_energy_exact(0.4, &m, e, 1.0).unwrap().value)
            .collect();
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0 && max / min < 3.0, "{v:?}");
    }
}
