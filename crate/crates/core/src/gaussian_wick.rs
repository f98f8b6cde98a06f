//! Monte Carlo verification of Gaussian integration by parts,
//! `E[Z_l f(Z)] = sum_j Cov(Z_l, Z_j) E[d_j f(Z)]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mc::MCResult;
use crate::rng::{derive_seed, rng_from_seed};

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = -1e-10;
const BATCH: usize = 1 << 14;

/// A centered Gaussian vector given by its covariance.
#[derive(Debug, Clone)]
pub struct GaussianVectorSpec {
    cov: DMatrix<f64>,
    /// `cov = factor * factor^T`
    factor: DMatrix<f64>,
}

impl GaussianVectorSpec {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(invalid("covariance", "must be a non-empty square matrix"));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(invalid("covariance", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(cov.clone());
        let min = eig.eigenvalues.min();
        if min < EIGEN_TOL * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        let sqrt = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt);
        Ok(Self { cov, factor })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("covariance", "rows must all have the matrix dimension"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `Z = factor * xi` for a standard normal `xi`.
    pub fn transform(&self, xi: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.factor[(i, j)] * xi[j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WickReport {
    pub lhs: MCResult,
    pub rhs: MCResult,
    /// per-sample `lhs - rhs` on shared samples
    pub difference: MCResult,
    pub z_score: f64,
    /// largest relative mismatch of the finite-difference gradient spot check
    pub gradient_rel_error: f64,
}

const GRADIENT_POINTS: usize = 10;
const GRADIENT_TOL: f64 = 1e-4;

/// Central finite differences at standard-normal points of the law.
fn check_gradient(
    spec: &GaussianVectorSpec,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    seed: u64,
) -> f64 {
    let n = spec.dim();
    let mut rng = rng_from_seed(derive_seed(seed, u64::MAX));
    let mut worst: f64 = 0.0;
    let mut xi = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut g = vec![0.0; n];
    for _ in 0..GRADIENT_POINTS {
        xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        spec.transform(&xi, &mut z);
        grad(&z, &mut g);
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for j in 0..n {
            let h = 1e-5 * z[j].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(gnorm).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Both sides of the identity by Monte Carlo with shared antithetic samples.
pub fn verify_wick(
    spec: &GaussianVectorSpec,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad_f: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    ell: usize,
    n_samples: usize,
    seed: u64,
) -> Result<WickReport> {
    let n = spec.dim();
    if ell >= n {
        return Err(invalid("ell", format!("index {ell} out of range for dimension {n}")));
    }
    if n_samples < 2 * 30 {
        return Err(Error::TooFewSamples {
            needed: 60,
            got: n_samples,
        });
    }
    let gradient_rel_error = check_gradient(spec, f, grad_f, seed);
    if gradient_rel_error > GRADIENT_TOL {
        return Err(Error::InconsistentGradient {
            rel_error: gradient_rel_error,
        });
    }
    let cov_row: Vec<f64> = (0..n).map(|j| spec.cov[(ell, j)]).collect();
    let pairs = n_samples / 2;
    let n_batches = pairs.div_ceil(BATCH);
    let per_pair: Vec<(f64, f64)> = (0..n_batches)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let len = BATCH.min(pairs - b * BATCH);
            let mut xi = vec![0.0; n];
            let mut z = vec![0.0; n];
            let mut g = vec![0.0; n];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let mut l = 0.0;
                let mut r = 0.0;
                for sign in [1.0, -1.0] {
                    let xs: Vec<f64> = xi.iter().map(|v| sign * v).collect();
                    spec.transform(&xs, &mut z);
                    l += z[ell] * f(&z);
                    grad_f(&z, &mut g);
                    r += dot(&cov_row, &g);
                }
                out.push((0.5 * l, 0.5 * r));
            }
            out
        })
        .collect();
    let lhs: Vec<f64> = per_pair.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = per_pair.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = per_pair.iter().map(|p| p.0 - p.1).collect();
    let difference = MCResult::from_samples(&diff, seed);
    Ok(WickReport {
        lhs: MCResult::from_samples(&lhs, seed),
        rhs: MCResult::from_samples(&rhs, seed),
        difference,
        z_score: difference.z_score(0.0),
        gradient_rel_error,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `E[Z_l exp(i <t, Z>)] = i (Gamma t)_l exp(-t Gamma t / 2)` against a
/// Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharacteristicCheck {
    pub exact_re: f64,
    pub exact_im: f64,
    pub estimate_re: MCResult,
    pub estimate_im: MCResult,
    /// `|estimate - exact| / |exact|` for the complex value
    pub rel_error: f64,
}

/// The real part vanishes by symmetry and antithetic pairs reproduce that
/// exactly. The imaginary part uses `Z_l <t, Z>`, of known mean
/// `(Gamma t)_l`, as a control variate.
pub fn characteristic_function_check(
    spec: &GaussianVectorSpec,
    t: &[f64],
    ell: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CharacteristicCheck> {
    let n = spec.dim();
    if t.len() != n || ell >= n {
        return Err(invalid("t", "frequency and index must match the dimension"));
    }
    let gt: Vec<f64> = (0..n).map(|i| (0..n).map(|j| spec.cov[(i, j)] * t[j]).sum()).collect();
    let tgt = dot(t, &gt);
    let exact_im = gt[ell] * (-0.5 * tgt).exp();
    let pairs = n_samples / 2;
    let n_batches = pairs.div_ceil(BATCH);
    let per_pair: Vec<(f64, f64)> = (0..n_batches)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b as u64));
            let len = BATCH.min(pairs - b * BATCH);
            let mut xi = vec![0.0; n];
            let mut z = vec![0.0; n];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let (mut re, mut im) = (0.0, 0.0);
                for sign in [1.0, -1.0] {
                    let xs: Vec<f64> = xi.iter().map(|v| sign * v).collect();
                    spec.transform(&xs, &mut z);
                    let u = dot(t, &z);
                    re += z[ell] * u.cos();
                    im += z[ell] * (u.sin() - u);
                }
                out.push((0.5 * re, 0.5 * im + gt[ell]));
            }
            out
        })
        .collect();
    let re: Vec<f64> = per_pair.iter().map(|p| p.0).collect();
    let im: Vec<f64> = per_pair.iter().map(|p| p.1).collect();
    let estimate_re = MCResult::from_samples(&re, seed);
    let estimate_im = MCResult::from_samples(&im, seed);
    let rel_error = ((estimate_re.mean).powi(2) + (estimate_im.mean - exact_im).powi(2)).sqrt() / exact_im.abs();
    Ok(CharacteristicCheck {
        exact_re: 0.0,
        exact_im,
        estimate_re,
        estimate_im,
        rel_error,
    })
}

/// A covariance `A A^T / n` with `A` standard normal, reproducible from `seed`.
pub fn random_covariance(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64
}

const CENTER: [f64; 4] = [0.5, -0.3, 0.2, 0.4];

/// `|z - c|^2` for the fixed off-origin center, so that odd parts survive.
fn shifted_sq(z: &[f64]) -> f64 {
    z.iter().zip(CENTER).map(|(a, c)| (a - c) * (a - c)).sum()
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Sync>;
type GradFn = Box<dyn Fn(&[f64], &mut [f64]) + Sync>;

/// A regression case of the built-in suite.
pub struct WickCase {
    pub name: &'static str,
    pub spec: GaussianVectorSpec,
    pub f: ScalarFn,
    pub grad: GradFn,
    pub ell: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Fixed `(law, f)` pairs at pinned seeds. `scale` multiplies the sample
/// counts.
pub fn builtin_suite(scale: f64) -> Vec<WickCase> {
    let ns = |n: f64| ((n * scale) as usize).max(1000);
    let cov3 = random_covariance(3, 17);
    let cov4 = random_covariance(4, 23);
    vec![
        WickCase {
            name: "variance",
            spec: GaussianVectorSpec::from_rows(&[vec![2.5]]).expect("valid"),
            f: Box::new(|z| z[0]),
            grad: Box::new(|_, g| g[0] = 1.0),
            ell: 0,
            n_samples: ns(1e5),
            seed: 101,
        },
        WickCase {
            name: "cross_covariance",
            spec: GaussianVectorSpec::from_rows(&[vec![1.0, 0.6], vec![0.6, 2.0]]).expect("valid"),
            f: Box::new(|z| z[1]),
            grad: Box::new(|_, g| {
                g[0] = 0.0;
                g[1] = 1.0;
            }),
            ell: 0,
            n_samples: ns(1e5),
            seed: 102,
        },
        WickCase {
            name: "gaussian_bump",
            spec: GaussianVectorSpec::new(cov3.clone()).expect("valid"),
            f: Box::new(|z| (-0.5 * shifted_sq(z)).exp()),
            grad: Box::new(|z, g| {
                let e = (-0.5 * shifted_sq(z)).exp();
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = -(z[i] - CENTER[i]) * e;
                }
            }),
            ell: 1,
            n_samples: ns(1e6),
            seed: 103,
        },
        WickCase {
            name: "cubic_sine",
            spec: GaussianVectorSpec::new(cov3).expect("valid"),
            f: Box::new(|z| z[0].sin() * z[2] * z[2]),
            grad: Box::new(|z, g| {
                g[0] = z[0].cos() * z[2] * z[2];
                g[1] = 0.0;
                g[2] = 2.0 * z[0].sin() * z[2];
            }),
            ell: 2,
            n_samples: ns(1e6),
            seed: 104,
        },
        WickCase {
            name: "log_radial",
            spec: GaussianVectorSpec::new(cov4).expect("valid"),
            f: Box::new(|z| (1.0 + shifted_sq(z)).ln()),
            grad: Box::new(|z, g| {
                let s = 1.0 + shifted_sq(z);
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = 2.0 * (z[i] - CENTER[i]) / s;
                }
            }),
            ell: 3,
            n_samples: ns(1e6),
            seed: 105,
        },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: WickReport,
}

pub fn run_suite(cases: &[WickCase]) -> Result<Vec<SuiteEntry>> {
    cases
        .iter()
        .map(|c| {
            Ok(SuiteEntry {
                name: c.name.to_string(),
                report: verify_wick(&c.spec, &*c.f, &*c.grad, c.ell, c.n_samples, c.seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let err = GaussianVectorSpec::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
        assert!(GaussianVectorSpec::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        // singular but PSD is fine
        assert!(GaussianVectorSpec::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn factor_reproduces_covariance() {
        let spec = GaussianVectorSpec::new(random_covariance(4, 3)).unwrap();
        let back = &spec.factor * spec.factor.transpose();
        assert!((back - spec.covariance()).amax() < 1e-12);
    }

    #[test]
    fn variance_case() {
        let spec = GaussianVectorSpec::from_rows(&[vec![1.7]]).unwrap();
        let r = verify_wick(&spec, &|z| z[0], &|_, g| g[0] = 1.0, 0, 100_000, 5).unwrap();
        assert!(r.z_score < 3.0);
        assert!(r.lhs.within(1.7, 4.0));
        assert_relative_eq!(r.rhs.mean, 1.7, max_relative = 1e-12);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let spec = GaussianVectorSpec::from_rows(&[vec![1.0]]).unwrap();
        let err = verify_wick(&spec, &|z| z[0] * z[0], &|z, g| g[0] = z[0], 0, 1000, 5).unwrap_err();
        assert!(matches!(err, Error::InconsistentGradient { .. }));
    }

    #[test]
    fn same_seed_same_report() {
        let spec = GaussianVectorSpec::new(random_covariance(3, 9)).unwrap();
        let f = |z: &[f64]| z[0].cos();
        let g = |z: &[f64], g: &mut [f64]| {
            g[0] = -z[0].sin();
            g[1] = 0.0;
            g[2] = 0.0;
        };
        let a = verify_wick(&spec, &f, &g, 1, 50_000, 8).unwrap();
        let b = crate::mc::with_threads(2, || verify_wick(&spec, &f, &g, 1, 50_000, 8).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn characteristic_function_closed_form() {
        let spec = GaussianVectorSpec::new(random_covariance(3, 31)).unwrap();
        let c = characteristic_function_check(&spec, &[0.2, -0.1, 0.15], 0, 200_000, 4).unwrap();
        assert_eq!(c.estimate_re.mean, 0.0);
        assert!(c.estimate_im.within(c.exact_im, 4.0));
        assert_relative_eq!(c.estimate_im.mean, c.exact_im, max_relative = 1e-2);
    }
}
