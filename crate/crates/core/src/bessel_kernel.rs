//! The Bessel-potential kernel `K_alpha`, the integral kernel of
//! `(1 - Laplacian)^(-alpha)` on `R^d`:
//!
//! `K_alpha(x) = gamma * int_0^inf t^(alpha - d/2) exp(-|x|^2/(4t) - t) dt/t`,
//! `gamma = 1 / (Gamma(alpha) (4 pi)^(d/2))`.
//!
//! Values come from adaptive quadrature of this representation in a
//! logarithmic variable. Hot loops use [`KernelTable`], a monotone cubic
//! interpolant of `ln K` against `ln r`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_legendre, Integrator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// alpha < d/2: singular like |x|^(2 alpha - d) at the origin
    Subcritical,
    /// alpha = d/2: logarithmic singularity
    Critical,
    /// alpha > d/2: bounded, K(0) = gamma * Gamma(alpha - d/2)
    Supercritical,
}

const CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub dim: usize,
    pub gamma_const: f64,
    pub regime: Regime,
}

impl KernelSpec {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("order {alpha} must be positive")));
        }
        if dim == 0 {
            return Err(invalid("dim", "dimension must be positive"));
        }
        let half_d = dim as f64 / 2.0;
        let regime = if (alpha - half_d).abs() <= CRITICAL_TOL {
            Regime::Critical
        } else if alpha < half_d {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        };
        Ok(Self {
            alpha,
            dim,
            gamma_const: normalization(alpha, dim),
            regime,
        })
    }

    /// `alpha - d/2`
    pub fn excess(&self) -> f64 {
        self.alpha - self.dim as f64 / 2.0
    }
}

/// `1 / (Gamma(order) (4 pi)^(d/2))`; zero at the poles of Gamma.
pub fn normalization(order: f64, dim: usize) -> f64 {
    let four_pi_pow = (4.0 * PI).powf(dim as f64 / 2.0);
    if order <= 0.0 && order == order.round() {
        return 0.0;
    }
    1.0 / (gamma(order) * four_pi_pow)
}

/// `int_0^inf y^(a-1) exp(-p/y - q y) dy` for `p, q > 0`, integrated in
/// `u = ln y` between the points where the (concave) exponent has dropped
/// 60 units below its peak. Splits at the peak and at `split_u`.
fn log_variable_integral(a: f64, p: f64, q: f64, split_u: f64, rel_tol: f64) -> f64 {
    let phi = |u: f64| a * u - p * (-u).exp() - q * u.exp();
    // peak of the exponent: q y^2 - a y - p = 0
    let disc = (a * a + 4.0 * p * q).sqrt();
    let y_star = if a >= 0.0 { (a + disc) / (2.0 * q) } else { 2.0 * p / (disc - a) };
    let u_star = y_star.ln();
    let peak = phi(u_star);
    let drop = 60.0;
    let mut step = 1.0;
    while phi(u_star - step) > peak - drop {
        step *= 2.0;
    }
    let lo = u_star - step;
    step = 1.0;
    while phi(u_star + step) > peak - drop {
        step *= 2.0;
    }
    let hi = u_star + step;
    let mut breaks = vec![lo, u_star, hi];
    if split_u > lo && split_u < hi && (split_u - u_star).abs() > 1e-9 {
        breaks.push(split_u);
    }
    breaks.sort_by(f64::total_cmp);
    let integrator = Integrator::new(rel_tol).with_max_panels(400);
    let r = integrator.integrate_breaks(|u| (phi(u) - peak).exp(), &breaks);
    r.value * peak.exp()
}

const KERNEL_REL_TOL: f64 = 1e-13;

/// `K_order(r)` for `r > 0` and any real order (the representation converges
/// for every order when `r > 0`; orders at poles of Gamma give zero).
pub fn kernel_value(order: f64, dim: usize, r: f64) -> f64 {
    let g = normalization(order, dim);
    if g == 0.0 {
        return 0.0;
    }
    let a = order - dim as f64 / 2.0;
    let split = r.max(1.0).ln();
    if a < -CRITICAL_TOL && order > 0.0 {
        // subcritical: t = r^2 s exposes the r^(2a) factor
        g * r.powf(2.0 * a) * rho_integral(a, r, split - 2.0 * r.ln())
    } else {
        g * log_variable_integral(a, r * r / 4.0, 1.0, split, KERNEL_REL_TOL)
    }
}

fn rho_integral(a: f64, r: f64, split_u: f64) -> f64 {
    log_variable_integral(a, 0.25, r * r, split_u, KERNEL_REL_TOL)
}

/// `K_alpha(r)` by quadrature.
pub fn eval_k(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(invalid("r", format!("radius {r} must be finite and nonnegative")));
    }
    if r == 0.0 {
        return eval_k_zero(spec).map_err(|_| Error::SingularAtOrigin {
            alpha: spec.alpha,
            dim: spec.dim,
        });
    }
    Ok(kernel_value(spec.alpha, spec.dim, r))
}

/// `K_alpha(0) = gamma * Gamma(alpha - d/2)`, finite iff `alpha > d/2`.
pub fn eval_k_zero(spec: &KernelSpec) -> Result<f64> {
    if spec.regime != Regime::Supercritical {
        return Err(Error::Divergent(format!(
            "K_alpha(0) diverges for alpha = {} <= d/2 = {}",
            spec.alpha,
            spec.dim as f64 / 2.0
        )));
    }
    Ok(spec.gamma_const * gamma(spec.excess()))
}

/// `-Laplacian K_alpha(r) = K_{alpha-1}(r) - K_alpha(r)`, from the operator
/// identity `(1 - Laplacian) K_alpha = K_{alpha-1}`.
pub fn laplacian_k(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid("r", "the Laplacian identity is evaluated away from the origin"));
    }
    Ok(kernel_value(spec.alpha - 1.0, spec.dim, r) - kernel_value(spec.alpha, spec.dim, r))
}

/// Envelope factor `rho(r) = K_alpha(r) / r^(2 alpha - d)` (subcritical) or
/// `K_alpha(r)` otherwise.
pub fn envelope_factor(spec: &KernelSpec, r: f64) -> f64 {
    match spec.regime {
        Regime::Subcritical => spec.gamma_const * rho_integral(spec.excess(), r, 0.0),
        _ => kernel_value(spec.alpha, spec.dim, r),
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Monotone cubic (Fritsch–Carlson) interpolant on a uniform grid.
#[derive(Debug, Clone)]
struct MonotoneCubic {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x0: f64, h: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slope = vec![0.0; n];
        slope[0] = delta[0];
        slope[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                slope[i] = 0.0;
            } else {
                // harmonic mean keeps the interpolant monotone
                slope[i] = 2.0 / (1.0 / delta[i - 1] + 1.0 / delta[i]);
            }
        }
        Self { x0, h, y, slope }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let pos = ((x - self.x0) / self.h).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let t = pos - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[i] + h10 * self.h * self.slope[i] + h01 * self.y[i + 1] + h11 * self.h * self.slope[i + 1]
    }
}

/// Memoized `K_alpha` on a log-spaced radial grid. Immutable after
/// construction; radii outside the table fall back to direct quadrature.
#[derive(Debug, Clone)]
pub struct KernelTable {
    spec: KernelSpec,
    ln_r_min: f64,
    ln_r_max: f64,
    interp: MonotoneCubic,
    k_zero: Option<f64>,
}

pub const TABLE_R_MIN: f64 = 1e-6;
pub const TABLE_R_MAX: f64 = 60.0;
const TABLE_LN_STEP: f64 = 0.01;

impl KernelTable {
    pub fn new(spec: KernelSpec) -> Self {
        let ln_r_min = TABLE_R_MIN.ln();
        let ln_r_max = TABLE_R_MAX.ln();
        let n = ((ln_r_max - ln_r_min) / TABLE_LN_STEP).ceil() as usize + 1;
        let h = (ln_r_max - ln_r_min) / (n - 1) as f64;
        use rayon::prelude::*;
        let y: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| kernel_value(spec.alpha, spec.dim, (ln_r_min + i as f64 * h).exp()).ln())
            .collect();
        Self {
            spec,
            ln_r_min,
            ln_r_max,
            interp: MonotoneCubic::new(ln_r_min, h, y),
            k_zero: eval_k_zero(&spec).ok(),
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn k_zero(&self) -> Option<f64> {
        self.k_zero
    }

    /// `K_alpha(r)`; `r = 0` returns `K_alpha(0)` or `+inf` when singular.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.k_zero.unwrap_or(f64::INFINITY);
        }
        let lr = r.ln();
        if lr < self.ln_r_min {
            return small_r_expansion(&self.spec, r);
        }
        if lr > self.ln_r_max {
            return kernel_value(self.spec.alpha, self.spec.dim, r);
        }
        self.interp.eval(lr).exp()
    }
}

/// `gamma [Gamma(a) + Gamma(-a) (r/2)^(2a)]` with `a = alpha - d/2`, the
/// two leading terms of `K_alpha` at the origin; the neglected terms are
/// `O(r^2)` relative. The critical case uses `-2 gamma (ln(r/2) + euler)`.
pub fn small_r_expansion(spec: &KernelSpec, r: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let a = spec.excess();
    let g = spec.gamma_const;
    match spec.regime {
        Regime::Critical => -2.0 * g * ((0.5 * r).ln() + EULER_GAMMA),
        Regime::Subcritical if a <= -1.0 => g * gamma(-a) * (0.5 * r).powf(2.0 * a),
        Regime::Supercritical if a >= 1.0 => g * gamma(a),
        _ => g * (gamma(a) + gamma(-a) * (0.5 * r).powf(2.0 * a)),
    }
}

/// Density of `|N|` for a standard `d`-dimensional Gaussian `N`.
pub fn chi_density(dim: usize, r: f64) -> f64 {
    let h = dim as f64 / 2.0;
    ((dim as f64 - 1.0) * r.ln() - 0.5 * r * r - (h - 1.0) * 2f64.ln() - ln_gamma(h)).exp()
}

const CHI_LN_LO: f64 = -23.0; // r ~ 1e-10
const CHI_LN_HI: f64 = 3.3; // r ~ 27, chi tail below 1e-150

/// Radial integral `int_0^inf f(r) chi_d(r) dr` in `v = ln r` with a
/// power-law correction for `r < e^CHI_LN_LO`; `small_r_power` is the
/// exponent of `f(r) r^d` near zero.
fn chi_integral<F: Fn(f64) -> f64>(dim: usize, f: F, small_r_power: f64, rel_tol: f64) -> f64 {
    let h = dim as f64 / 2.0;
    let log_norm = (h - 1.0) * 2f64.ln() + ln_gamma(h);
    let d = dim as f64;
    let g = |v: f64| {
        let r = v.exp();
        f(r) * (d * v - 0.5 * r * r - log_norm).exp()
    };
    let body = Integrator::new(rel_tol)
        .with_max_panels(600)
        .integrate_breaks(&g, &[CHI_LN_LO, -6.0, -2.0, 0.0, 1.0, 2.0, CHI_LN_HI]);
    body.value + g(CHI_LN_LO) / small_r_power
}

fn small_r_power(spec: &KernelSpec) -> f64 {
    match spec.regime {
        Regime::Subcritical => 2.0 * spec.alpha,
        _ => spec.dim as f64,
    }
}

pub const GAUSSIAN_EXPECTATION_REL_TOL: f64 = 1e-10;

/// `m(sigma) = E[K_alpha(sigma N)]` by radial quadrature against the chi law.
pub fn gaussian_expectation_k(table: &KernelTable, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "scale must be positive"));
    }
    let spec = table.spec();
    Ok(chi_integral(
        spec.dim,
        |r| table.eval(sigma * r),
        small_r_power(spec),
        GAUSSIAN_EXPECTATION_REL_TOL,
    ))
}

/// `E[-Laplacian K_alpha(sigma N)] = sigma^-2 E[K_alpha(sigma N) (d - |N|^2)]`
/// (Gaussian integration by parts); equals `m_{alpha-1} - m_alpha` when
/// `alpha > 1` and stays finite for every `alpha > 0`.
pub fn gaussian_expectation_neg_laplacian(table: &KernelTable, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "scale must be positive"));
    }
    let spec = table.spec();
    let d = spec.dim as f64;
    let v = chi_integral(
        spec.dim,
        |r| table.eval(sigma * r) * (d - r * r),
        small_r_power(spec),
        GAUSSIAN_EXPECTATION_REL_TOL,
    );
    Ok(v / (sigma * sigma))
}

/// `int_{R^d} K_alpha`, which must equal one; returns (value, tail estimate
/// beyond the truncation radius).
pub fn normalization_integral(table: &KernelTable) -> (f64, f64) {
    let spec = table.spec();
    let area = sphere_area(spec.dim);
    let d = spec.dim as f64;
    let r_max: f64 = 50.0;
    let g = |v: f64| {
        let r = v.exp();
        table.eval(r) * r.powf(d)
    };
    let lo = -23.0;
    let body = Integrator::new(1e-10)
        .integrate_breaks(&g, &[lo, -6.0, -2.0, 0.0, 1.0, 2.0, 3.0, r_max.ln()]);
    let small = g(lo) / small_r_power(spec);
    // K decays at least like exp(-r) times a power; bound the remainder by
    // the last value continued exponentially
    let tail = area * table.eval(r_max) * r_max.powf(d - 1.0) * 2.0;
    (area * (body.value + small), tail)
}

/// Result of checking `int K_{a/2}(x - y) K_{a/2}(x - z) dx = K_a(y - z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemigroupReport {
    pub lhs: f64,
    pub target: f64,
    pub residual: f64,
    pub tail_estimate: f64,
    pub box_warning: bool,
}

/// Composite Gauss–Legendre rule on `[lo, hi]` with geometric grading toward
/// each interior or endpoint singularity listed in `singular`.
fn graded_axis(lo: f64, hi: f64, singular: &[f64], base_panels: usize, levels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let mut breaks = vec![lo, hi];
    let width = (hi - lo) / base_panels as f64;
    for k in 1..base_panels {
        breaks.push(lo + k as f64 * width);
    }
    for &s in singular {
        if s >= lo && s <= hi {
            breaks.push(s);
            let mut d = width;
            for _ in 0..levels {
                d *= 0.2;
                if s - d > lo {
                    breaks.push(s - d);
                }
                if s + d < hi {
                    breaks.push(s + d);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (x, wt) in gx.iter().zip(&gw) {
            nodes.push(c + h * x);
            weights.push(h * wt);
        }
    }
    (nodes, weights)
}

/// Quadrature of the semigroup product over the box
/// `[-L, r + L] x [-L, L]^(d-1)` (separation along the first axis).
pub fn check_semigroup(alpha: f64, dim: usize, r: f64, half_width: f64) -> Result<SemigroupReport> {
    let half = KernelSpec::new(alpha / 2.0, dim)?;
    let full = KernelSpec::new(alpha, dim)?;
    if r == 0.0 && full.regime != Regime::Supercritical {
        return Err(Error::Divergent("K_alpha(0) is infinite for alpha <= d/2".into()));
    }
    if !(half_width > 0.0) || !(r >= 0.0) {
        return Err(invalid("half_width", "box half-width and separation must be positive"));
    }
    let table = KernelTable::new(half);
    let target = eval_k(&full, r)?;
    let (levels, base, order) = match dim {
        1 => (14, 64, 12),
        2 => (8, 24, 8),
        _ => (5, 12, 6),
    };
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|i| {
            if i == 0 {
                graded_axis(-half_width, r + half_width, &[0.0, r], base, levels, order)
            } else {
                graded_axis(-half_width, half_width, &[0.0], base, levels, order)
            }
        })
        .collect();
    let lhs = tensor_sum(&axes, |x| {
        let r2_y: f64 = x.iter().map(|v| v * v).sum();
        let r2_z: f64 = x.iter().enumerate().map(|(i, v)| if i == 0 { (v - r).powi(2) } else { v * v }).sum();
        table.eval(r2_y.sqrt()) * table.eval(r2_z.sqrt())
    });
    // radial tail of the product outside the box
    let area = sphere_area(dim);
    let d = dim as f64;
    let tail = Integrator::new(1e-8)
        .integrate_to_infinity(|rho| table.eval(rho).powi(2) * (rho + r).powf(d - 1.0), half_width)
        .value
        * area;
    let residual = (lhs - target).abs() / target;
    Ok(SemigroupReport {
        lhs,
        target,
        residual,
        tail_estimate: tail,
        box_warning: tail > 1e-4 * target,
    })
}

fn tensor_sum<F: Fn(&[f64]) -> f64 + Sync>(axes: &[(Vec<f64>, Vec<f64>)], f: F) -> f64 {
    use rayon::prelude::*;
    let dim = axes.len();
    let (x0, w0) = &axes[0];
    (0..x0.len())
        .into_par_iter()
        .map(|i| {
            let mut point = vec![0.0; dim];
            point[0] = x0[i];
            let mut acc = 0.0;
            let mut idx = vec![0usize; dim];
            loop {
                let mut w = w0[i];
                for k in 1..dim {
                    point[k] = axes[k].0[idx[k]];
                    w *= axes[k].1[idx[k]];
                }
                acc += w * f(&point);
                let mut k = 1;
                loop {
                    if k >= dim {
                        return acc;
                    }
                    idx[k] += 1;
                    if idx[k] < axes[k].0.len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Regime-appropriate envelope `lower(r) <= K_alpha(r) <= upper(r)` with
/// constants calibrated on a reference grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEnvelope {
    pub spec: KernelSpec,
    pub c_lower: f64,
    pub c_upper: f64,
}

const ENVELOPE_R_MIN: f64 = 1e-4;
const ENVELOPE_R_MAX: f64 = 40.0;
const ENVELOPE_SLACK: f64 = 0.02;

impl KernelEnvelope {
    fn shapes(spec: &KernelSpec, r: f64) -> (f64, f64) {
        let log_factor = 1.0 + (1.0 / r).ln().max(0.0);
        match spec.regime {
            Regime::Subcritical => {
                let p = r.powf(2.0 * spec.excess());
                (p * (-2.0 * r * r).exp(), p * (-r / 8.0).exp())
            }
            Regime::Supercritical => ((-r * r / 4.0).exp(), (-r / 8.0).exp()),
            Regime::Critical => (log_factor * (-2.0 * r * r).exp(), log_factor * (-r / 8.0).exp()),
        }
    }

    pub fn calibrate(spec: KernelSpec) -> Self {
        let n = 400;
        let (lmin, lmax) = (ENVELOPE_R_MIN.ln(), ENVELOPE_R_MAX.ln());
        let mut c_lower = f64::INFINITY;
        let mut c_upper: f64 = 0.0;
        for i in 0..n {
            let r = (lmin + (lmax - lmin) * i as f64 / (n - 1) as f64).exp();
            let k = kernel_value(spec.alpha, spec.dim, r);
            let (lo, hi) = Self::shapes(&spec, r);
            c_lower = c_lower.min(k / lo);
            c_upper = c_upper.max(k / hi);
        }
        Self {
            spec,
            c_lower: c_lower * (1.0 - ENVELOPE_SLACK),
            c_upper: c_upper * (1.0 + ENVELOPE_SLACK),
        }
    }

    pub fn bounds(&self, r: f64) -> (f64, f64) {
        let (lo, hi) = Self::shapes(&self.spec, r);
        (self.c_lower * lo, self.c_upper * hi)
    }
}

pub fn asymptotic_envelope(spec: &KernelSpec, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(invalid("r", "envelope is defined for r > 0"));
    }
    Ok(KernelEnvelope::calibrate(*spec).bounds(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn yukawa(r: f64) -> f64 {
        (-r).exp() / (4.0 * PI * r)
    }

    #[test]
    fn small_r_expansion_joins_the_table() {
        for (alpha, dim) in [(1.0, 3), (0.7, 2), (1.5, 3), (1.2, 2), (0.4, 3), (2.0, 1), (1.0, 2)] {
            let spec = KernelSpec::new(alpha, dim).unwrap();
            for r in [TABLE_R_MIN, 3e-6, 1e-5] {
                let direct = kernel_value(alpha, dim, r);
                let approx = small_r_expansion(&spec, r);
                assert!((approx / direct - 1.0).abs() < 1e-8, "{alpha} {dim} {r}: {approx} {direct}");
            }
        }
    }

    #[test]
    fn regimes() {
        assert_eq!(KernelSpec::new(1.0, 3).unwrap().regime, Regime::Subcritical);
        assert_eq!(KernelSpec::new(1.0, 2).unwrap().regime, Regime::Critical);
        assert_eq!(KernelSpec::new(1.0, 1).unwrap().regime, Regime::Supercritical);
        assert!(KernelSpec::new(0.0, 1).is_err());
        assert!(KernelSpec::new(-1.0, 1).is_err());
    }

    #[test]
    fn closed_forms() {
        let s3 = KernelSpec::new(1.0, 3).unwrap();
        assert_relative_eq!(eval_k(&s3, 1.0).unwrap(), (-1.0f64).exp() / (4.0 * PI), max_relative = 1e-9);
        let s1 = KernelSpec::new(1.0, 1).unwrap();
        assert_relative_eq!(eval_k(&s1, 2.0).unwrap(), 0.5 * (-2.0f64).exp(), max_relative = 1e-11);
        let s32 = KernelSpec::new(2.0, 3).unwrap();
        assert_relative_eq!(eval_k(&s32, 0.0).unwrap(), PI.sqrt() / (4.0 * PI).powf(1.5), max_relative = 1e-12);
        for r in [1e-5, 0.1, 3.0, 30.0] {
            assert_relative_eq!(eval_k(&s3, r).unwrap(), yukawa(r as f64), max_relative = 1e-11);
        }
    }

    #[test]
    fn origin_errors() {
        let s = KernelSpec::new(1.0, 2).unwrap();
        assert!(matches!(eval_k(&s, 0.0), Err(Error::SingularAtOrigin { .. })));
        assert!(matches!(eval_k_zero(&s), Err(Error::Divergent(_))));
        assert_relative_eq!(eval_k_zero(&KernelSpec::new(1.0, 1).unwrap()).unwrap(), 0.5, max_relative = 1e-13);
    }

    #[test]
    fn negative_orders_are_finite_away_from_origin() {
        // K_0 vanishes off the origin (delta); K_{-1/2} is a derivative of it
        assert_eq!(kernel_value(0.0, 3, 0.5), 0.0);
        assert!(kernel_value(-0.5, 1, 0.5).is_finite());
        assert!(gamma(-0.5) < 0.0);
    }

    #[test]
    fn laplacian_in_one_dimension() {
        // K_1 = e^-r / 2 and K_2 = (1 + r) e^-r / 4 in d = 1
        let s = KernelSpec::new(2.0, 1).unwrap();
        for r in [0.3, 1.0, 4.0] {
            let expected: f64 = 0.5 * (-r as f64).exp() - 0.25 * (1.0 + r) * (-r as f64).exp();
            assert_relative_eq!(laplacian_k(&s, r).unwrap(), expected, max_relative = 1e-10);
        }
        assert!(laplacian_k(&s, 40.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn table_matches_direct_quadrature() {
        for (alpha, dim) in [(1.0, 3), (1.2, 3), (2.0, 3), (0.5, 1), (1.0, 2), (1.55, 3), (0.35, 1)] {
            let spec = KernelSpec::new(alpha, dim).unwrap();
            let table = KernelTable::new(spec);
            let mut r = 2e-6;
            while r < 55.0 {
                let direct = kernel_value(alpha, dim, r);
                let rel = (table.eval(r) - direct).abs() / direct;
                assert!(rel < 1e-6, "alpha={alpha} d={dim} r={r} rel={rel}");
                r *= 1.0137;
            }
        }
    }

    #[test]
    fn radially_decreasing_and_positive() {
        for (alpha, dim) in [(0.4, 3), (1.5, 3), (3.0, 2), (0.7, 1)] {
            let spec = KernelSpec::new(alpha, dim).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let r = 1e-3 * 1.05f64.powi(i);
                let k = eval_k(&spec, r).unwrap();
                assert!(k > 0.0 && k < prev, "alpha={alpha} d={dim} r={r}");
                prev = k;
            }
        }
    }

    #[test]
    fn integrates_to_one() {
        for (alpha, dim) in [(1.0, 3), (0.4, 3), (2.0, 2), (0.5, 1), (1.5, 1)] {
            let table = KernelTable::new(KernelSpec::new(alpha, dim).unwrap());
            let (v, tail) = normalization_integral(&table);
            assert!((v - 1.0).abs() < 1e-4, "alpha={alpha} d={dim}: {v}");
            assert!(tail < 1e-6);
        }
    }

    #[test]
    fn gaussian_expectation_one_dimension() {
        // E[e^{-s|N|}] = 2 e^{s^2/2} P(N > s)
        let table = KernelTable::new(KernelSpec::new(1.0, 1).unwrap());
        let m = gaussian_expectation_k(&table, 1.0).unwrap();
        let expected = 0.5 * 0.5f64.exp() * statrs::function::erf::erfc(1.0 / 2f64.sqrt());
        assert_relative_eq!(m, expected, max_relative = 1e-8);
        assert_relative_eq!(m, 0.261_578_291_865_123_4, max_relative = 1e-8);
    }

    #[test]
    fn gaussian_expectation_small_sigma_and_monotone() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let table = KernelTable::new(spec);
        let k0 = eval_k_zero(&spec).unwrap();
        assert_relative_eq!(gaussian_expectation_k(&table, 1e-4).unwrap(), k0, max_relative = 1e-3);
        for (alpha, dim) in [(2.0, 3), (0.8, 3), (1.0, 2)] {
            let table = KernelTable::new(KernelSpec::new(alpha, dim).unwrap());
            let mut prev = f64::INFINITY;
            for i in 0..40 {
                let m = gaussian_expectation_k(&table, 0.01 * 1.2f64.powi(i)).unwrap();
                assert!(m < prev);
                prev = m;
            }
        }
    }

    #[test]
    fn semigroup_one_dimension() {
        for r in [0.0, 0.5, 1.0] {
            let rep = check_semigroup(1.0, 1, r, 14.0).unwrap();
            assert!(rep.residual < 1e-3, "r={r}: {rep:?}");
            assert!(!rep.box_warning);
        }
        let small = check_semigroup(1.0, 1, 1.0, 0.5).unwrap();
        assert!(small.box_warning);
    }

    #[test]
    fn envelope_contains_kernel() {
        for (alpha, dim) in [(1.0, 3), (0.3, 2), (1.0, 2), (1.0, 1), (2.5, 3)] {
            let spec = KernelSpec::new(alpha, dim).unwrap();
            let env = KernelEnvelope::calibrate(spec);
            for i in 0..97 {
                let r = 1.3e-4 * 1.11f64.powi(i);
                let k = eval_k(&spec, r).unwrap();
                let (lo, hi) = env.bounds(r);
                assert!(lo <= k && k <= hi, "alpha={alpha} d={dim} r={r}: {lo} {k} {hi}");
            }
        }
    }
}
