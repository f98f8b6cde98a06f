//! Exact synthesis of d-dimensional fractional Brownian motion on a uniform
//! grid, regularized discrete derivatives, and sampler self-tests.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mc::MCResult;
use crate::rng::{derive_path, derive_seed, rng_from_seed};

/// Parameters of a sampled fBm path. The path is synthesized on
/// `[0, horizon + pad_steps * dt]` so that right-looking difference quotients
/// never need extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmParams {
    pub hurst: f64,
    pub dim: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub pad_steps: usize,
    pub seed: u64,
}

impl FbmParams {
    pub fn new(hurst: f64, dim: usize, horizon: f64, n_steps: usize, seed: u64) -> Self {
        Self {
            hurst,
            dim,
            horizon,
            n_steps,
            pad_steps: 0,
            seed,
        }
    }

    /// Extend the synthesis horizon by enough steps to resolve `epsilon`.
    pub fn padded_for(mut self, epsilon: f64) -> Self {
        let m = (epsilon / self.step()).round() as usize;
        self.pad_steps = self.pad_steps.max(m);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn total_nodes(&self) -> usize {
        self.n_steps + self.pad_steps + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(invalid("hurst", format!("H = {} must lie in (0, 1)", self.hurst)));
        }
        if self.dim == 0 {
            return Err(invalid("dim", "dimension must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("T = {} must be positive", self.horizon)));
        }
        if self.n_steps < 2 {
            return Err(invalid("n_steps", "need at least two grid steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMethod {
    CirculantEmbedding,
    Cholesky,
}

/// A sampled trajectory; `values[i][k]` is component `i` at time `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub params: FbmParams,
    pub method: SynthesisMethod,
    pub values: Vec<Vec<f64>>,
}

impl FbmPath {
    /// Wrap caller-supplied values (used for deterministic test paths).
    pub fn from_values(params: FbmParams, values: Vec<Vec<f64>>) -> Result<Self> {
        params.validate()?;
        if values.len() != params.dim || values.iter().any(|v| v.len() != params.total_nodes()) {
            return Err(invalid(
                "values",
                format!(
                    "expected {} rows of {} nodes",
                    params.dim,
                    params.total_nodes()
                ),
            ));
        }
        if values.iter().any(|v| v[0] != 0.0) {
            return Err(invalid("values", "path must start at the origin"));
        }
        Ok(Self {
            params,
            method: SynthesisMethod::Cholesky,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn step(&self) -> f64 {
        self.params.step()
    }

    pub fn n_steps(&self) -> usize {
        self.params.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.params.total_nodes()).map(|k| self.time(k)).collect()
    }

    /// Position at node `k` as a vector.
    pub fn point(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    /// Value at node `k`, where negative indices read as zero and indices
    /// past the synthesized range hold the last sampled value.
    fn value_clamped(&self, comp: usize, k: isize) -> f64 {
        if k < 0 {
            0.0
        } else {
            let row = &self.values[comp];
            row[(k as usize).min(row.len() - 1)]
        }
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.step();
        let k = x.round();
        if (x - k).abs() > 1e-9 * x.abs().max(1.0) || k < 0.0 || k as usize >= self.params.total_nodes() {
            return Err(invalid("time", format!("t = {t} is not a grid node")));
        }
        Ok(k as usize)
    }
}

fn fgn_autocovariance(hurst: f64, dt: f64, lag: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = lag as f64;
    0.5 * dt.powf(h2) * ((k + 1.0).powf(h2) + (k - 1.0).abs().powf(h2) - 2.0 * k.powf(h2))
}

/// Eigenvalues of the minimal circulant embedding of the fGn covariance, or
/// `None` when the embedding is not nonnegative.
fn circulant_eigenvalues(hurst: f64, dt: f64, n: usize) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); m];
    for j in 0..=n {
        row[j] = Complex::new(fgn_autocovariance(hurst, dt, j), 0.0);
    }
    for j in 1..n {
        row[m - j] = row[j];
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut row);
    let scale = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let mut out = Vec::with_capacity(m);
    for c in row {
        if c.re < -1e-12 * scale {
            return None;
        }
        out.push(c.re.max(0.0));
    }
    Some(out)
}

fn circulant_increments(eig: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let m = eig.len();
    let mut rng = rng_from_seed(seed);
    let mut w: Vec<Complex<f64>> = eig
        .iter()
        .map(|&l| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex::new(a, b) * (l / m as f64).sqrt()
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut w);
    w.truncate(n);
    w.into_iter().map(|c| c.re).collect()
}

fn increment_cholesky(hurst: f64, dt: f64, n: usize) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, dt, i.abs_diff(j)));
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveSemidefinite { min_eigenvalue: f64::NAN })
}

fn cholesky_increments(l: &DMatrix<f64>, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let z = DVector::from_fn(l.nrows(), |_, _| StandardNormal.sample(&mut rng));
    (l * z).iter().copied().collect()
}

fn cumulate(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for x in increments {
        acc += x;
        out.push(acc);
    }
    out
}

/// Preferred synthesis route; `Auto` uses circulant embedding and falls back
/// to a dense Cholesky factor when the embedding has negative eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    #[default]
    Auto,
    ForceCholesky,
}

pub fn sample_fbm(params: FbmParams) -> Result<FbmPath> {
    sample_fbm_with(params, MethodChoice::Auto)
}

pub fn sample_fbm_with(params: FbmParams, choice: MethodChoice) -> Result<FbmPath> {
    params.validate()?;
    let n = params.total_nodes() - 1;
    let dt = params.step();
    let eig = match choice {
        MethodChoice::Auto => circulant_eigenvalues(params.hurst, dt, n),
        MethodChoice::ForceCholesky => None,
    };
    let (method, values) = match eig {
        Some(eig) => {
            let values = (0..params.dim)
                .into_par_iter()
                .map(|i| cumulate(&circulant_increments(&eig, n, derive_path(params.seed, &[i as u64]))))
                .collect();
            (SynthesisMethod::CirculantEmbedding, values)
        }
        None => {
            let l = increment_cholesky(params.hurst, dt, n)?;
            let values = (0..params.dim)
                .into_par_iter()
                .map(|i| cumulate(&cholesky_increments(&l, derive_path(params.seed, &[i as u64]))))
                .collect();
            (SynthesisMethod::Cholesky, values)
        }
    };
    Ok(FbmPath {
        params,
        method,
        values,
    })
}

/// Independent paths with seeds derived from `base_seed` and the path index.
pub fn sample_fbm_batch(template: FbmParams, n_paths: usize, base_seed: u64) -> Result<Vec<FbmPath>> {
    template.validate()?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| sample_fbm(template.with_seed(derive_seed(base_seed, i))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// `(X_{t+eps} - X_t) / eps`
    Forward,
    /// `(X_{t+eps} - X_{t-eps}) / (2 eps)`
    Symmetric,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Forward => "forward",
            SchemeKind::Symmetric => "symmetric",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(invalid("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivScheme {
    pub kind: SchemeKind,
    pub epsilon: f64,
}

impl DerivScheme {
    pub fn new(kind: SchemeKind, epsilon: f64) -> Self {
        Self { kind, epsilon }
    }

    pub fn symmetric(epsilon: f64) -> Self {
        Self::new(SchemeKind::Symmetric, epsilon)
    }

    pub fn forward(epsilon: f64) -> Self {
        Self::new(SchemeKind::Forward, epsilon)
    }

    /// Number of grid steps spanned by `epsilon`.
    pub fn steps_on(&self, dt: f64) -> Result<usize> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "mollification width must be positive"));
        }
        let x = self.epsilon / dt;
        let m = x.round();
        if m < 1.0 || (x - m).abs() > 1e-9 * x {
            return Err(Error::MisalignedEpsilon {
                requested: self.epsilon,
                step: dt,
                nearest: m.max(1.0) * dt,
            });
        }
        Ok(m as usize)
    }
}

/// `D_eps X` sampled at nodes `0..=n_steps`; `values[i][k]` for component `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub scheme: DerivScheme,
    pub step: f64,
    pub values: Vec<Vec<f64>>,
}

impl Derivative {
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }
}

/// Discrete derivative with `X_{t-eps} = 0` for `t < eps`.
pub fn discrete_derivative(path: &FbmPath, scheme: DerivScheme) -> Result<Derivative> {
    let dt = path.step();
    let m = scheme.steps_on(dt)? as isize;
    let n = path.n_steps();
    let values = (0..path.dim())
        .map(|i| {
            (0..=n as isize)
                .map(|k| match scheme.kind {
                    SchemeKind::Forward => {
                        (path.value_clamped(i, k + m) - path.value_clamped(i, k)) / scheme.epsilon
                    }
                    SchemeKind::Symmetric => {
                        (path.value_clamped(i, k + m) - path.value_clamped(i, k - m))
                            / (2.0 * scheme.epsilon)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Derivative {
        scheme,
        step: dt,
        values,
    })
}

const MIN_COVARIANCE_PATHS: usize = 100;

/// Sample covariance of `X^i_s` and `X^i_t` across paths (zero-mean estimator).
pub fn empirical_covariance(paths: &[FbmPath], s: f64, t: f64, component: usize) -> Result<MCResult> {
    empirical_cross_covariance(paths, s, t, component, component)
}

/// Sample covariance of `X^i_s` and `X^j_t`.
pub fn empirical_cross_covariance(
    paths: &[FbmPath],
    s: f64,
    t: f64,
    i: usize,
    j: usize,
) -> Result<MCResult> {
    if paths.len() < MIN_COVARIANCE_PATHS {
        return Err(Error::TooFewSamples {
            needed: MIN_COVARIANCE_PATHS,
            got: paths.len(),
        });
    }
    let first = &paths[0];
    if i >= first.dim() || j >= first.dim() {
        return Err(invalid("component", "component index out of range"));
    }
    let ks = first.index_of(s)?;
    let kt = first.index_of(t)?;
    let samples: Vec<f64> = paths.iter().map(|p| p.values[i][ks] * p.values[j][kt]).collect();
    Ok(MCResult::from_samples(&samples, first.params.seed))
}

const MAGIC: [u8; 2] = *b"FB";

/// Little-endian binary: a 32-byte header (magic "FB", d as u16, H, T as f64,
/// n_steps as u32, seed as u64) followed by node-major f64 values.
pub fn write_binary<W: Write>(path: &FbmPath, mut w: W) -> Result<()> {
    let p = &path.params;
    let mut header = Vec::with_capacity(32);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&(p.dim as u16).to_le_bytes());
    header.extend_from_slice(&p.hurst.to_le_bytes());
    header.extend_from_slice(&p.horizon.to_le_bytes());
    header.extend_from_slice(&(p.n_steps as u32).to_le_bytes());
    header.extend_from_slice(&p.seed.to_le_bytes());
    w.write_all(&header)?;
    for k in 0..p.total_nodes() {
        for row in &path.values {
            w.write_all(&row[k].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<FbmPath> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if header[0..2] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let dim = u16::from_le_bytes([header[2], header[3]]) as usize;
    let hurst = f64_at(4);
    let horizon = f64_at(12);
    let n_steps = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if dim == 0 || body.len() % (8 * dim) != 0 {
        return Err(Error::Format("truncated body".into()));
    }
    let nodes = body.len() / (8 * dim);
    if nodes < n_steps + 1 {
        return Err(Error::Format("fewer nodes than n_steps + 1".into()));
    }
    let mut values = vec![Vec::with_capacity(nodes); dim];
    for (idx, chunk) in body.chunks_exact(8).enumerate() {
        values[idx % dim].push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let params = FbmParams {
        hurst,
        dim,
        horizon,
        n_steps,
        pad_steps: nodes - n_steps - 1,
        seed,
    };
    FbmPath::from_values(params, values)
}

/// CSV with columns `t,x1..xd`, one row per node.
pub fn write_csv<W: Write>(path: &FbmPath, mut w: W) -> Result<()> {
    let cols: Vec<String> = (1..=path.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "t,{}", cols.join(","))?;
    for k in 0..path.params.total_nodes() {
        write!(w, "{}", path.time(k))?;
        for row in &path.values {
            write!(w, ",{}", row[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fbm_cov(h: f64, s: f64, t: f64) -> f64 {
        0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
    }

    #[test]
    fn rejects_bad_hurst() {
        for h in [0.0, 1.0, -0.2, 1.5] {
            assert!(sample_fbm(FbmParams::new(h, 1, 1.0, 8, 0)).is_err());
        }
    }

    #[test]
    fn starts_at_origin_and_reports_method() {
        let p = sample_fbm(FbmParams::new(0.3, 3, 2.0, 64, 5)).unwrap();
        assert!(p.values.iter().all(|r| r[0] == 0.0));
        assert_eq!(p.method, SynthesisMethod::CirculantEmbedding);
        let c = sample_fbm_with(FbmParams::new(0.3, 3, 2.0, 64, 5), MethodChoice::ForceCholesky).unwrap();
        assert_eq!(c.method, SynthesisMethod::Cholesky);
    }

    #[test]
    fn brownian_increments_have_step_variance() {
        let params = FbmParams::new(0.5, 1, 1.0, 16, 0);
        let paths = sample_fbm_batch(params, 10_000, 11).unwrap();
        let dt = params.step();
        let samples: Vec<f64> = paths
            .iter()
            .flat_map(|p| p.values[0].windows(2).map(|w| (w[1] - w[0]).powi(2)).collect::<Vec<_>>())
            .collect();
        let r = MCResult::from_samples(&samples, 11);
        assert!(r.within(dt, 4.0), "{r:?} vs {dt}");
    }

    #[test]
    fn terminal_variance_scales_as_t_to_2h() {
        for h in [0.25, 0.7] {
            let params = FbmParams::new(h, 1, 2.0, 32, 0);
            let paths = sample_fbm_batch(params, 10_000, 3).unwrap();
            let r = empirical_covariance(&paths, 2.0, 2.0, 0).unwrap();
            assert!(r.within(2f64.powf(2.0 * h), 4.0), "H={h}: {r:?}");
        }
    }

    #[test]
    fn covariance_examples() {
        let paths = sample_fbm_batch(FbmParams::new(0.5, 1, 2.0, 40, 0), 10_000, 17).unwrap();
        assert!(empirical_covariance(&paths, 1.0, 2.0, 0).unwrap().within(1.0, 4.0));
        let paths = sample_fbm_batch(FbmParams::new(0.7, 2, 2.0, 40, 0), 10_000, 19).unwrap();
        let r = empirical_covariance(&paths, 0.5, 1.5, 1).unwrap();
        assert!(r.within(fbm_cov(0.7, 0.5, 1.5), 4.0), "{r:?}");
        let x = empirical_cross_covariance(&paths, 1.0, 1.0, 0, 1).unwrap();
        assert!(x.within(0.0, 4.0), "{x:?}");
    }

    #[test]
    fn too_few_paths_rejected() {
        let paths = sample_fbm_batch(FbmParams::new(0.5, 1, 1.0, 8, 0), 50, 1).unwrap();
        assert!(matches!(
            empirical_covariance(&paths, 0.5, 1.0, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn cholesky_and_circulant_agree_in_law() {
        let params = FbmParams::new(0.3, 1, 1.0, 20, 0);
        let chol: Vec<FbmPath> = (0..4000u64)
            .map(|i| sample_fbm_with(params.with_seed(i), MethodChoice::ForceCholesky).unwrap())
            .collect();
        let r = empirical_covariance(&chol, 0.25, 0.75, 0).unwrap();
        assert!(r.within(fbm_cov(0.3, 0.25, 0.75), 4.0), "{r:?}");
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let params = FbmParams::new(0.7, 2, 1.0, 64, 1234);
        let a = crate::mc::with_threads(1, || sample_fbm(params).unwrap());
        let b = crate::mc::with_threads(8, || sample_fbm(params).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn derivative_of_zero_and_linear_paths() {
        let params = FbmParams::new(0.5, 1, 1.0, 20, 0).padded_for(0.1);
        let zero = FbmPath::from_values(params, vec![vec![0.0; params.total_nodes()]]).unwrap();
        let d = discrete_derivative(&zero, DerivScheme::symmetric(0.1)).unwrap();
        assert!(d.values[0].iter().all(|&x| x == 0.0));

        let v = 1.7;
        let lin: Vec<f64> = (0..params.total_nodes()).map(|k| v * k as f64 * params.step()).collect();
        let lin = FbmPath::from_values(params, vec![lin]).unwrap();
        let d = discrete_derivative(&lin, DerivScheme::symmetric(0.1)).unwrap();
        for k in 2..=20 {
            assert_relative_eq!(d.values[0][k], v, max_relative = 1e-12);
        }
        let f = discrete_derivative(&lin, DerivScheme::forward(0.1)).unwrap();
        assert!(f.values[0].iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn misaligned_epsilon_reports_nearest() {
        let p = sample_fbm(FbmParams::new(0.5, 1, 1.0, 10, 0).padded_for(0.2)).unwrap();
        match discrete_derivative(&p, DerivScheme::forward(0.13)) {
            Err(Error::MisalignedEpsilon { nearest, .. }) => assert_relative_eq!(nearest, 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_derivative_telescopes() {
        // trapz over [0,T] of D^-X equals (trapz over [T,T+eps] - trapz over [0,eps]) / eps
        let eps = 0.05;
        let params = FbmParams::new(0.5, 1, 1.0, 200, 0).padded_for(eps);
        for seed in 0..5 {
            let p = sample_fbm(params.with_seed(seed)).unwrap();
            let d = discrete_derivative(&p, DerivScheme::forward(eps)).unwrap();
            let dt = p.step();
            let trapz = |xs: &[f64]| dt * (xs.iter().sum::<f64>() - 0.5 * (xs[0] + xs[xs.len() - 1]));
            let lhs = trapz(&d.values[0]);
            let x = &p.values[0];
            let m = 10;
            let rhs = (trapz(&x[200..=200 + m]) - trapz(&x[0..=m])) / eps;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-10);
            // as eps approaches dt the average tends to X_T / T
            let d1 = discrete_derivative(&p, DerivScheme::forward(dt)).unwrap();
            let mean = trapz(&d1.values[0]) / params.horizon;
            assert!((mean - x[200]).abs() < 0.2, "{mean} vs {}", x[200]);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = sample_fbm(FbmParams::new(0.5, 2, 1.0, 4, 0)).unwrap();
        let mut buf = Vec::new();
        write_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2\n0,0,0\n"));
        assert_eq!(text.lines().count(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn binary_roundtrip(h in 0.05f64..0.95, dim in 1usize..4, n in 2usize..40, pad in 0usize..5, seed: u64) {
            let mut params = FbmParams::new(h, dim, 1.5, n, seed);
            params.pad_steps = pad;
            let p = sample_fbm(params).unwrap();
            let mut buf = Vec::new();
            write_binary(&p, &mut buf).unwrap();
            prop_assert_eq!(buf.len(), 32 + 8 * dim * (n + pad + 1));
            let q = read_binary(buf.as_slice()).unwrap();
            prop_assert_eq!(q.params, p.params);
            prop_assert_eq!(q.values, p.values);
        }
    }
}
