//! Covariance algebra of fBm and its regularized derivatives, threshold
//! orders, and Gaussian moments.
//!
//! Derivative covariances are expanded exactly from
//! `R(u, v) = (u^2H + v^2H - |u - v|^2H) / 2` at the shifted time points;
//! the closed forms `Phi`, `psi`, `psi~` are kept as a reference.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::gaussian_paths::SchemeKind;

/// A finite linear combination `sum_k w_k X_{u_k}` of fBm values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunctional {
    /// `(w_k, u_k)` pairs
    pub terms: Vec<(f64, f64)>,
}

impl LinearFunctional {
    pub fn value_at(t: f64) -> Self {
        Self { terms: vec![(1.0, t)] }
    }

    pub fn increment(t: f64, s: f64) -> Self {
        Self {
            terms: vec![(1.0, t), (-1.0, s)],
        }
    }

    /// `D_eps X_t` with the convention `X_{t-eps} = 0` for `t < eps`.
    pub fn derivative(kind: SchemeKind, t: f64, eps: f64) -> Self {
        let terms = match kind {
            SchemeKind::Forward => vec![(1.0 / eps, t + eps), (-1.0 / eps, t)],
            SchemeKind::Symmetric if t >= eps => {
                vec![(0.5 / eps, t + eps), (-0.5 / eps, t - eps)]
            }
            SchemeKind::Symmetric => vec![(0.5 / eps, t + eps)],
        };
        Self { terms }
    }

    fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.0).sum()
    }

    fn weighted_powers(&self, h2: f64) -> f64 {
        self.terms.iter().map(|&(w, u)| w * u.abs().powf(h2)).sum()
    }
}

/// `Cov(A, B)` from the fBm covariance. The single-time `u^2H` terms are
/// grouped by their coefficient sums so they vanish identically when both
/// functionals are increments.
pub fn covariance(hurst: f64, a: &LinearFunctional, b: &LinearFunctional) -> f64 {
    let h2 = 2.0 * hurst;
    let mut cross = 0.0;
    for &(wa, u) in &a.terms {
        for &(wb, v) in &b.terms {
            // coincident times computed along different routes differ by
            // rounding, which |.|^(2H) amplifies when 2H < 1
            let gap = (u - v).abs();
            let gap = if gap <= 1e-13 * u.abs().max(v.abs()) { 0.0 } else { gap };
            cross += wa * wb * gap.powf(h2);
        }
    }
    let sa = a.weight_sum();
    let sb = b.weight_sum();
    let single = if sa == 0.0 && sb == 0.0 {
        0.0
    } else {
        sb * a.weighted_powers(h2) + sa * b.weighted_powers(h2)
    };
    0.5 * (single - cross)
}

/// Covariance atoms at a pair of times `t > s` (ordered internally).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceAtoms {
    pub hurst: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub kind: SchemeKind,
    /// `Cov(D X^i_t, D X^i_s)`
    pub c: f64,
    /// `Cov(D X^i_t, X^i_t - X^i_s)` for the later time `t`
    pub b_t: f64,
    /// `Cov(D X^i_s, X^i_t - X^i_s)` for the earlier time `s`
    pub b_s: f64,
    /// either time lies in `[0, eps)` where the truncation convention applies
    pub boundary: bool,
    /// `(tau^(2H-2)/2) Phi(k eps / tau)` with `k = 2` (symmetric) or `1` (forward)
    pub c_reference: f64,
    /// the textbook closed form for the later-time atom
    pub b_reference: f64,
}

impl CovarianceAtoms {
    /// `Cov(D X_t, X_t - X_s) Cov(D X_s, X_t - X_s)`, the weight of the
    /// Laplacian term in the Wick expansion of `E Z`.
    pub fn b_product(&self) -> f64 {
        self.b_t * self.b_s
    }
}

/// Only `c` and `b_t b_s` at ordered times `t > s`, without reference forms.
#[inline]
pub fn atoms_fast(kind: SchemeKind, hurst: f64, t: f64, s: f64, eps: f64) -> (f64, f64, f64) {
    let dt = LinearFunctional::derivative(kind, t, eps);
    let ds = LinearFunctional::derivative(kind, s, eps);
    let inc = LinearFunctional::increment(t, s);
    (
        covariance(hurst, &dt, &ds),
        covariance(hurst, &dt, &inc),
        covariance(hurst, &ds, &inc),
    )
}

pub fn cov_exact(kind: SchemeKind, hurst: f64, t: f64, s: f64, eps: f64) -> Result<CovarianceAtoms> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(invalid("hurst", "H must lie in (0, 1)"));
    }
    if !(eps > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if t == s || t < 0.0 || s < 0.0 {
        return Err(invalid("t", "need distinct nonnegative times"));
    }
    let (t, s) = if t > s { (t, s) } else { (s, t) };
    let tau = t - s;
    let (c, b_t, b_s) = atoms_fast(kind, hurst, t, s, eps);
    let boundary = kind == SchemeKind::Symmetric && s < eps;
    let h2 = 2.0 * hurst;
    let (c_reference, b_reference) = match kind {
        SchemeKind::Symmetric => (
            0.5 * tau.powf(h2 - 2.0) * phi(hurst, 2.0 * eps / tau),
            ((tau + eps).abs().powf(h2) - (tau - eps).abs().powf(h2)) / (2.0 * eps),
        ),
        SchemeKind::Forward => (
            0.5 * tau.powf(h2 - 2.0) * phi(hurst, eps / tau),
            ((tau + eps).abs().powf(h2) - (tau - eps).abs().powf(h2) - eps.powf(h2)) / (2.0 * eps),
        ),
    };
    Ok(CovarianceAtoms {
        hurst,
        epsilon: eps,
        tau,
        kind,
        c,
        b_t,
        b_s,
        boundary,
        c_reference,
        b_reference,
    })
}

fn phi(hurst: f64, x: f64) -> f64 {
    let h2 = 2.0 * hurst;
    if x.abs() < 1.0 {
        // the first-order terms cancel; expm1/log1p keep the remainder accurate
        ((h2 * x.ln_1p()).exp_m1() + (h2 * (-x).ln_1p()).exp_m1()) / (x * x)
    } else {
        ((1.0 + x).abs().powf(h2) + (1.0 - x).abs().powf(h2) - 2.0) / (x * x)
    }
}

/// `(Phi(x), psi(x), psi~(x))` in closed form:
/// `Phi = (|1+x|^2H + |1-x|^2H - 2)/x^2`, `psi = (|1+x|^2H - |1-x|^2H)/(2x)`,
/// `psi~ = (|x|^2H + 1 - |1-x|^2H)/(2x)`.
pub fn phi_psi_reference(hurst: f64, x: f64) -> Result<(f64, f64, f64)> {
    if x == 0.0 || !x.is_finite() {
        return Err(invalid("x", "reference functions are evaluated at x != 0"));
    }
    let h2 = 2.0 * hurst;
    let p = (1.0 + x).abs().powf(h2);
    let m = (1.0 - x).abs().powf(h2);
    Ok((phi(hurst, x), (p - m) / (2.0 * x), (x.abs().powf(h2) + 1.0 - m) / (2.0 * x)))
}

/// Richardson-extrapolated `lim_{x -> 0} Phi(x)` from `x = 2^-k`.
pub fn phi_small_x_limit(hurst: f64) -> f64 {
    // Phi(x) = L + a x^2 + O(x^4) for 2H not an even integer near 0
    let xs: Vec<f64> = (4..10).map(|k| 2f64.powi(-k)).collect();
    let mut row: Vec<f64> = xs.iter().map(|&x| phi(hurst, x)).collect();
    let mut factor = 4.0;
    for _ in 0..2 {
        row = row.windows(2).map(|w| (factor * w[1] - w[0]) / (factor - 1.0)).collect();
        factor *= 4.0;
    }
    row[row.len() - 1]
}

/// `alpha_H = d/2 - 1 + 1/(2H)`.
pub fn alpha_h(hurst: f64, dim: usize) -> f64 {
    dim as f64 / 2.0 - 1.0 + 1.0 / (2.0 * hurst)
}

/// `max(0, d/2 - 1/(2H))`: above this order `E int int K_alpha(X_t - X_s)` is finite.
pub fn condition_b_threshold(hurst: f64, dim: usize) -> f64 {
    (dim as f64 / 2.0 - 1.0 / (2.0 * hurst)).max(0.0)
}

/// `E|N|^gamma = 2^(gamma/2) Gamma((d + gamma)/2) / Gamma(d/2)`.
pub fn moment_n(gamma: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    if gamma <= -d {
        return Err(Error::Divergent(format!("E|N|^{gamma} diverges in dimension {dim}")));
    }
    Ok((0.5 * gamma * 2f64.ln() + ln_gamma((d + gamma) / 2.0) - ln_gamma(d / 2.0)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn brownian_independence() {
        let a = cov_exact(SchemeKind::Symmetric, 0.5, 0.8, 0.3, 0.1).unwrap();
        assert!(a.c.abs() < 1e-13, "{}", a.c);
        let f = cov_exact(SchemeKind::Forward, 0.5, 0.8, 0.3, 0.1).unwrap();
        assert!(f.b_t.abs() < 1e-13);
        assert!(f.c.abs() < 1e-13);
    }

    #[test]
    fn symmetric_atoms_agree_in_the_interior() {
        for h in [0.3, 0.5, 0.8] {
            let a = cov_exact(SchemeKind::Symmetric, h, 0.9, 0.35, 0.05).unwrap();
            // both atoms are taken against the same increment X_t - X_s
            assert_relative_eq!(a.b_t, a.b_s, max_relative = 1e-12);
            let (_, psi, _) = phi_psi_reference(h, 0.05 / a.tau).unwrap();
            // the R-expansion gives half of the textbook closed form
            assert_relative_eq!(a.b_t, 0.5 * a.tau.powf(2.0 * h - 1.0) * psi, max_relative = 1e-12);
            assert_relative_eq!(a.b_t / a.b_reference, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn forward_earlier_atom_is_psi_tilde() {
        let (h, t, s, eps) = (0.7, 1.0, 0.6, 0.1);
        let a = cov_exact(SchemeKind::Forward, h, t, s, eps).unwrap();
        let (_, _, psi_t) = phi_psi_reference(h, eps / (t - s)).unwrap();
        assert_relative_eq!(a.b_s, (t - s).powf(2.0 * h - 1.0) * psi_t, max_relative = 1e-12);
    }

    #[test]
    fn reference_functions() {
        let (phi, psi, _) = phi_psi_reference(0.5, 0.4).unwrap();
        assert!(phi.abs() < 1e-15);
        assert_relative_eq!(psi, 1.0, max_relative = 1e-15);
        for h in [0.2, 0.5, 0.9] {
            let (phi1, _, _) = phi_psi_reference(h, 1.0).unwrap();
            assert_relative_eq!(phi1, 2f64.powf(2.0 * h) - 2.0, max_relative = 1e-14);
        }
        assert!(phi_psi_reference(0.5, 0.0).is_err());
    }

    #[test]
    fn small_x_limit_is_taylor_coefficient() {
        for h in [0.3, 0.7, 0.9] {
            let lim = phi_small_x_limit(h);
            assert_relative_eq!(lim, 2.0 * h * (2.0 * h - 1.0), max_relative = 1e-6);
        }
    }

    #[test]
    fn thresholds() {
        assert_relative_eq!(alpha_h(0.5, 3), 1.5);
        assert_relative_eq!(alpha_h(0.5, 1), 0.5);
        assert_relative_eq!(alpha_h(0.25, 3), 2.5);
        assert_relative_eq!(condition_b_threshold(0.5, 3), 0.5);
        assert_eq!(condition_b_threshold(0.5, 1), 0.0);
        for h in [0.3, 0.5, 0.7] {
            for d in 1..=3 {
                assert!(alpha_h(h, d) > condition_b_threshold(h, d));
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        for d in 1..5 {
            assert_relative_eq!(moment_n(2.0, d).unwrap(), d as f64, max_relative = 1e-13);
            assert_relative_eq!(moment_n(0.0, d).unwrap(), 1.0, max_relative = 1e-14);
        }
        assert_relative_eq!(
            moment_n(1.0, 3).unwrap(),
            2.0 * (2.0 / std::f64::consts::PI).sqrt(),
            max_relative = 1e-13
        );
        assert!(moment_n(-3.0, 3).is_err());
    }

    #[test]
    fn moment_matches_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::rng_from_seed(5);
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .collect();
        let r = crate::mc::MCResult::from_samples(&samples, 5);
        assert!(r.within(moment_n(1.0, 3).unwrap(), 4.0), "{r:?}");
    }

    #[test]
    fn boundary_flag_and_truncated_functional() {
        let a = cov_exact(SchemeKind::Symmetric, 0.5, 0.5, 0.02, 0.05).unwrap();
        assert!(a.boundary);
        // D X_s = X_{s+eps} / (2 eps) for s < eps; Brownian covariance is min
        let dt = LinearFunctional::derivative(SchemeKind::Symmetric, 0.5, 0.05);
        let ds = LinearFunctional::derivative(SchemeKind::Symmetric, 0.02, 0.05);
        let direct = (0.5 / 0.05) * (0.5 / 0.05) * ((0.07f64).min(0.55) - (0.07f64).min(0.45));
        assert_relative_eq!(covariance(0.5, &dt, &ds), direct, epsilon = 1e-12);
    }
}
