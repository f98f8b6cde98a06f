//! Monte Carlo checks of two Brownian estimates with unspecified constants:
//! a moment bound for `|x + W_t|` and the finiteness of an occupation
//! integral. Both are verified as finiteness and stability trends, never
//! against a constant.

use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::mc::{run_replicas, MCResult};
use crate::rng::ReplicaRng;

/// Tail index below which the sample variance is considered infinite.
pub const MIN_TAIL_INDEX: f64 = 2.0;
/// Allowed relative deviation of the stderr from the `n^-1/2` law.
pub const STDERR_SHRINK_TOLERANCE: f64 = 0.2;

/// Moments of `Z_t = |x + W_t|^2`, a squared Bessel process of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselMomentCase {
    pub dim: usize,
    pub theta: f64,
    pub q: f64,
    pub start: Vec<f64>,
    pub horizon: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl BesselMomentCase {
    pub fn new(dim: usize, theta: f64, q: f64, start: Vec<f64>, n_paths: usize, seed: u64) -> Self {
        Self {
            dim,
            theta,
            q,
            start,
            horizon: 1.0,
            n_paths,
            n_steps: 1000,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("dim", "points are polar only for d >= 2"));
        }
        if self.start.len() != self.dim {
            return Err(invalid("start", "starting offset must have d components"));
        }
        if !(self.q > 1.0) || !self.theta.is_finite() {
            return Err(invalid("q", "need q > 1 and a finite theta"));
        }
        if !(self.horizon > 0.0) || self.n_steps == 0 || self.n_paths < 2 {
            return Err(invalid("case", "need T > 0, at least one step and two paths"));
        }
        Ok(())
    }
}

/// An MC estimate with its heavy-tail diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosedResult {
    pub result: MCResult,
    /// Hill estimate of the upper tail index; infinite for bounded samples
    pub tail_index: f64,
    pub reliable: bool,
}

impl DiagnosedResult {
    fn from_samples(samples: &[f64], seed: u64) -> Self {
        let tail_index = hill_tail_index(samples);
        Self {
            result: MCResult::from_samples(samples, seed),
            tail_index,
            reliable: tail_index > MIN_TAIL_INDEX,
        }
    }

    fn exact(value: f64, seed: u64, n: usize) -> Self {
        Self {
            result: MCResult {
                mean: value,
                stderr: 0.0,
                std_dev: 0.0,
                n_replicas: n,
                base_seed: seed,
            },
            tail_index: f64::INFINITY,
            reliable: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesselMomentReport {
    /// `E[(int_0^T dt / |x + W_t|^(2(1 - theta)))^(q/2)]`
    pub lhs: DiagnosedResult,
    /// `E|x + W_T|^(theta q)`, `|x|^(theta q)` and `int_0^T E|x + W_t|^(-(2 - theta) q) dt`
    pub rhs_terms: [DiagnosedResult; 3],
    /// `lhs / (sum of rhs terms)`, the implied constant
    pub ratio: f64,
    /// delta-method stderr of the ratio, using the per-path pairing
    pub ratio_stderr: f64,
    pub reliable: bool,
}

/// Hill estimator over the `sqrt(n)` largest magnitudes.
pub fn hill_tail_index(samples: &[f64]) -> f64 {
    let mut a: Vec<f64> = samples.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    if a.len() < 20 {
        return f64::INFINITY;
    }
    a.sort_by(|x, y| y.total_cmp(x));
    let k = ((a.len() as f64).sqrt() as usize).max(10);
    let base = a[k];
    let xi = a[..k].iter().map(|v| (v / base).ln()).sum::<f64>() / k as f64;
    if xi <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / xi
    }
}

/// Whether `large.stderr / small.stderr` follows `sqrt(n_small / n_large)`
/// within [`STDERR_SHRINK_TOLERANCE`].
pub fn stderr_shrinks(small: &MCResult, large: &MCResult) -> bool {
    if small.stderr == 0.0 && large.stderr == 0.0 {
        return true;
    }
    let expected = (small.n_replicas as f64 / large.n_replicas as f64).sqrt();
    let observed = large.stderr / small.stderr;
    (observed / expected - 1.0).abs() <= STDERR_SHRINK_TOLERANCE
}

/// Walk a Brownian path from `start` and call `visit(k, position)` at each
/// of the `n + 1` nodes.
fn walk(rng: &mut ReplicaRng, start: &[f64], dt: f64, n: usize, mut visit: impl FnMut(usize, &[f64])) {
    let sd = dt.sqrt();
    let mut pos = start.to_vec();
    visit(0, &pos);
    for k in 1..=n {
        for p in pos.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *p += sd * z;
        }
        visit(k, &pos);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn bessel_moment_estimates(case: &BesselMomentCase) -> Result<BesselMomentReport> {
    case.validate()?;
    let n = case.n_steps;
    let dt = case.horizon / n as f64;
    let lhs_power = 2.0 * (1.0 - case.theta);
    let end_power = case.theta * case.q;
    let inner_power = (2.0 - case.theta) * case.q;
    let rows = run_replicas(case.n_paths, case.seed, |_, rng| {
        let (mut lhs, mut inner, mut end) = (0.0, 0.0, 0.0);
        walk(rng, &case.start, dt, n, |k, pos| {
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            let r = norm(pos);
            lhs += w * if lhs_power == 0.0 { 1.0 } else { r.powf(-lhs_power) };
            inner += w * r.powf(-inner_power);
            if k == n {
                end = r.powf(end_power);
            }
        });
        [lhs.powf(0.5 * case.q), end, inner]
    });
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let lhs = DiagnosedResult::from_samples(&col(0), case.seed);
    let rhs_terms = [
        DiagnosedResult::from_samples(&col(1), case.seed),
        DiagnosedResult::exact(norm(&case.start).powf(end_power), case.seed, case.n_paths),
        DiagnosedResult::from_samples(&col(2), case.seed),
    ];
    let denom: f64 = rhs_terms.iter().map(|t| t.result.mean).sum();
    let reliable = lhs.reliable && rhs_terms.iter().all(|t| t.reliable);
    let ratio = lhs.result.mean / denom;
    let constant = rhs_terms[1].result.mean;
    let linearized: Vec<f64> = rows.iter().map(|r| r[0] - ratio * (r[1] + constant + r[2])).collect();
    let ratio_stderr = MCResult::from_samples(&linearized, case.seed).stderr / denom;
    Ok(BesselMomentReport {
        lhs,
        rhs_terms,
        ratio,
        ratio_stderr,
        reliable,
    })
}

/// Far-start asymptote `T^(q/2) |x|^(-(1 - theta) q)` of the left side.
pub fn far_start_asymptote(theta: f64, q: f64, horizon: f64, distance: f64) -> f64 {
    horizon.powf(0.5 * q) * distance.powf(-(1.0 - theta) * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationCase {
    pub dim: usize,
    pub alpha: f64,
    pub p_prime: f64,
    pub eps_decay: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl OccupationCase {
    pub fn new(dim: usize, alpha: f64, p_prime: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dim,
            alpha,
            p_prime,
            eps_decay: 1.0,
            horizon: 1.0,
            n_paths,
            n_steps: 500,
            seed,
        }
    }

    /// `(d - alpha + 1) p' < d`, pure arithmetic.
    pub fn condition_holds(&self) -> bool {
        (self.dim as f64 - self.alpha + 1.0) * self.p_prime < self.dim as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationReport {
    pub estimate: DiagnosedResult,
    pub condition_holds: bool,
    /// set when the condition fails: the theory allows divergence
    pub divergence_warning: bool,
}

/// `int_{R^d} E[(int_0^T exp(-eps |x - W_t|) / |x - W_t|^(2d - 2 alpha) dt)^(p'/2)] dx`
/// by importance sampling `x` from the radial law `r ~ Gamma(d, lambda)` with
/// `lambda = eps p' / 2`, which carries the same exponential weight as the
/// integrand far from the path.
pub fn occupation_integral_estimate(case: &OccupationCase) -> Result<OccupationReport> {
    if case.dim < 2 || !(case.alpha > 1.0) || !(case.p_prime > 1.0) {
        return Err(invalid("occupation", "need d >= 2, alpha > 1 and p' > 1"));
    }
    if !(case.eps_decay > 0.0) || !(case.horizon > 0.0) || case.n_paths < 2 || case.n_steps == 0 {
        return Err(invalid("occupation", "need eps > 0, T > 0, two paths and one step"));
    }
    let d = case.dim;
    let lambda = 0.5 * case.eps_decay * case.p_prime;
    let sphere = 2.0 * std::f64::consts::PI.powf(0.5 * d as f64) / gamma(0.5 * d as f64);
    let log_density_at_zero = d as f64 * lambda.ln() - gamma(d as f64).ln() - sphere.ln();
    let radial = Gamma::new(d as f64, 1.0 / lambda).map_err(|e| invalid("occupation", &e.to_string()))?;
    let power = 2.0 * d as f64 - 2.0 * case.alpha;
    let n = case.n_steps;
    let dt = case.horizon / n as f64;
    let samples = run_replicas(case.n_paths, case.seed, |_, rng| {
        let r: f64 = radial.sample(rng);
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let dn = norm(&dir);
        for v in dir.iter_mut() {
            *v *= r / dn;
        }
        let mut inner = 0.0;
        let mut diff = vec![0.0; d];
        walk(rng, &vec![0.0; d], dt, n, |k, pos| {
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            for i in 0..d {
                diff[i] = dir[i] - pos[i];
            }
            let rho = norm(&diff);
            inner += w * (-case.eps_decay * rho).exp() * rho.powf(-power);
        });
        let log_f = log_density_at_zero - lambda * r;
        inner.powf(0.5 * case.p_prime) * (-log_f).exp()
    });
    let condition_holds = case.condition_holds();
    Ok(OccupationReport {
        estimate: DiagnosedResult::from_samples(&samples, case.seed),
        condition_holds,
        divergence_warning: !condition_holds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceedanceRow {
    pub distance: f64,
    pub frequency: f64,
    pub bound: f64,
    /// `frequency <= bound + 3 sigma` with `sigma` the binomial sd at the bound
    pub pass: bool,
}

/// Empirical `P(max_{[0,T]} |W_t| >= |x|/2)` against `2 exp(-|x| / 4T)`.
/// The maximum is monitored on the grid, which can only lower the frequency
/// by `O(sqrt(dt))` in the level.
pub fn maximal_exceedance(
    dim: usize,
    distances: &[f64],
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<ExceedanceRow>> {
    if dim < 1 || n_paths < 2 || n_steps == 0 || !(horizon > 0.0) {
        return Err(invalid("exceedance", "need d >= 1, two paths, one step and T > 0"));
    }
    let dt = horizon / n_steps as f64;
    let maxima = run_replicas(n_paths, seed, |_, rng| {
        let mut m = 0.0f64;
        walk(rng, &vec![0.0; dim], dt, n_steps, |_, pos| m = m.max(norm(pos)));
        m
    });
    Ok(distances
        .iter()
        .map(|&x| {
            let frequency = maxima.iter().filter(|&&m| m >= 0.5 * x).count() as f64 / n_paths as f64;
            let bound = 2.0 * (-x / (4.0 * horizon)).exp();
            let p = bound.min(1.0);
            let sigma = (p * (1.0 - p) / n_paths as f64).sqrt();
            ExceedanceRow {
                distance: x,
                frequency,
                bound,
                pass: frequency <= bound + 3.0 * sigma,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn theta_one_is_exact() {
        for (d, q) in [(2, 1.5), (3, 2.0), (5, 3.0)] {
            let mut start = vec![0.0; d];
            start[0] = 0.7;
            let mut case = BesselMomentCase::new(d, 1.0, q, start, 200, 11);
            case.horizon = 1.7;
            let rep = bessel_moment_estimates(&case).unwrap();
            let exact = 1.7f64.powf(0.5 * q);
            assert!((rep.lhs.result.mean - exact).abs() <= 1e-12 * exact, "{}", rep.lhs.result.mean);
        }
    }

    #[test]
    fn rejects_dimension_one() {
        let case = BesselMomentCase::new(1, 0.5, 2.0, vec![1.0], 100, 0);
        assert!(bessel_moment_estimates(&case).is_err());
    }

    #[test]
    fn condition_arithmetic() {
        assert!(OccupationCase::new(2, 1.8, 1.5, 10, 0).condition_holds());
        assert!(!OccupationCase::new(3, 1.2, 4.0, 10, 0).condition_holds());
    }

    #[test]
    fn hill_index_separates_tails() {
        let mut rng = crate::rng::rng_from_seed(1);
        let pareto: Vec<f64> = (0..20000).map(|_| rng.gen::<f64>().powf(-1.0)).collect();
        let normal: Vec<f64> = (0..20000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let a = hill_tail_index(&pareto);
        assert!((a - 1.0).abs() < 0.3, "{a}");
        assert!(hill_tail_index(&normal) > MIN_TAIL_INDEX);
        assert_eq!(hill_tail_index(&[2.0; 100]), f64::INFINITY);
    }

    fn ratio_case(n: usize, q: f64) -> BesselMomentReport {
        let mut case = BesselMomentCase::new(3, 0.5, q, vec![1.0, 0.0, 0.0], n, 5);
        case.n_steps = 200;
        bessel_moment_estimates(&case).unwrap()
    }

    #[test]
    fn ratio_is_stable_when_every_term_is_finite() {
        let (a, b) = (ratio_case(1000, 1.2), ratio_case(4000, 1.2));
        assert!(a.reliable && b.reliable);
        let z = (a.ratio - b.ratio).abs() / a.ratio_stderr.hypot(b.ratio_stderr);
        assert!(z < 3.0, "{} {} z={z}", a.ratio, b.ratio);
        assert!(stderr_shrinks(&a.lhs.result, &b.lhs.result));
    }

    #[test]
    fn infinite_mean_term_is_flagged() {
        // (2 - theta) q = d: the last right-hand term has infinite mean
        let r = ratio_case(4000, 2.0);
        assert!(r.lhs.reliable && r.rhs_terms[0].reliable);
        assert!(!r.rhs_terms[2].reliable && !r.reliable);
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
    }
}
