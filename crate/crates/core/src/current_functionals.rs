//! Regularized currents along sampled paths: the mollified current density
//! `eta`, the double integral `Z`, Riemann currents `I(phi)`, the Wick
//! decomposition of `Z`, and the exact expectation `E Z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel_kernel::{
    gaussian_expectation_k, gaussian_expectation_neg_laplacian, KernelSpec, KernelTable,
};
use crate::error::{invalid, Error, Result};
use crate::fbm_analytics::{alpha_h, atoms_fast, condition_b_threshold};
use crate::gaussian_paths::{
    discrete_derivative, sample_fbm, DerivScheme, FbmParams, FbmPath, SchemeKind,
};
use crate::mc::MCResult;
use crate::quadrature::Integrator;
use crate::rng::derive_seed;

/// Minimum number of grid steps spanned by the mollification width.
pub const MIN_STEPS_PER_EPSILON: usize = 4;

/// How the strip `[0, eps)`, where `X_{t-eps}` is truncated to zero, enters
/// time integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// integrate over `[0, T]` with the truncation convention
    #[default]
    Truncation,
    /// integrate over `[eps, T]` only
    InteriorOnly,
}

/// Treatment of the coincident-time cells of a double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalPolicy {
    /// bounded kernel, evaluated at the origin
    KernelAtOrigin,
    /// singular but integrable kernel: the neighbour cells scaled by the
    /// local correction `-2 zeta(gamma)` of a `tau^-gamma` singularity
    SingularCorrection,
    /// non-integrable singularity; diagonal cells dropped
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentEstimate {
    pub alpha: f64,
    pub scheme: DerivScheme,
    pub value: f64,
    pub n_steps: usize,
    pub step: f64,
    pub boundary: BoundaryPolicy,
    pub diagonal: DiagonalPolicy,
    pub seed: u64,
    pub warning: Option<String>,
}

/// Node-major copy of path positions and derivative values over the
/// integration range.
struct Nodes {
    dim: usize,
    lo: usize,
    hi: usize,
    dt: f64,
    pts: Vec<f64>,
    der: Vec<f64>,
}

impl Nodes {
    fn new(path: &FbmPath, scheme: DerivScheme, boundary: BoundaryPolicy, min_steps: usize) -> Result<Self> {
        let dt = path.step();
        let m = scheme.steps_on(dt)?;
        if m < min_steps {
            return Err(invalid(
                "epsilon",
                format!("eps = {} spans {m} grid steps; at least {min_steps} are required", scheme.epsilon),
            ));
        }
        let deriv = discrete_derivative(path, scheme)?;
        let dim = path.dim();
        let hi = path.n_steps();
        let lo = match boundary {
            BoundaryPolicy::Truncation => 0,
            BoundaryPolicy::InteriorOnly => m,
        };
        if hi < lo + 1 {
            return Err(invalid("epsilon", "interior range is empty"));
        }
        let mut pts = Vec::with_capacity((hi - lo + 1) * dim);
        let mut der = Vec::with_capacity((hi - lo + 1) * dim);
        for k in lo..=hi {
            for i in 0..dim {
                pts.push(path.values[i][k]);
                der.push(deriv.values[i][k]);
            }
        }
        Ok(Self { dim, lo, hi, dt, pts, der })
    }

    fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    fn x(&self, j: usize) -> &[f64] {
        &self.pts[j * self.dim..(j + 1) * self.dim]
    }

    fn d(&self, j: usize) -> &[f64] {
        &self.der[j * self.dim..(j + 1) * self.dim]
    }

    fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.len() - 1 {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Mean of `f(j, j +- 1)` over the existing neighbours.
    fn neighbour_mean(&self, j: usize, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        let mut cnt = 0.0;
        if j > 0 {
            acc += f(j, j - 1);
            cnt += 1.0;
        }
        if j + 1 < self.len() {
            acc += f(j, j + 1);
            cnt += 1.0;
        }
        acc / cnt
    }

    /// `sum_{j,k} w_j w_k F(j, k)` with symmetric `F`, rows in ascending order.
    fn pair_sum(&self, diag: impl Fn(usize) -> f64, off: impl Fn(usize, usize) -> f64) -> f64 {
        let n = self.len();
        let mut total = 0.0;
        for j in 0..n {
            let wj = self.weight(j);
            let mut row = 0.0;
            for k in (j + 1)..n {
                row += self.weight(k) * off(j, k);
            }
            total += wj * (2.0 * row + wj * diag(j));
        }
        total
    }
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diagonal_policy(spec: &KernelSpec, hurst: f64) -> DiagonalPolicy {
    if spec.alpha <= condition_b_threshold(hurst, spec.dim) {
        DiagonalPolicy::Excluded
    } else if spec.excess() > 1e-12 {
        DiagonalPolicy::KernelAtOrigin
    } else {
        DiagonalPolicy::SingularCorrection
    }
}

/// Riemann zeta on `[0, 1)` by Euler-Maclaurin summation.
fn zeta_below_one(s: f64) -> f64 {
    const N: usize = 10;
    // B_2j / (2j)!
    const B: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
    ];
    let n = N as f64;
    let mut acc: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    acc += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    let mut rising = s;
    for (j, b) in B.iter().enumerate() {
        let p = 2 * j + 1;
        acc += b * rising * n.powf(-s - p as f64);
        rising *= (s + p as f64) * (s + p as f64 + 1.0);
    }
    acc
}

/// Diagonal weight relative to the neighbour cells for a row integrand
/// `~ tau^-gamma`, `gamma = H (d - 2 alpha)`: the trapezoid sum on the
/// off-diagonal nodes misses `-zeta(gamma) dt^(1 - gamma)` per side.
fn singular_diagonal_factor(spec: &KernelSpec, hurst: f64) -> f64 {
    let gamma = (hurst * (spec.dim as f64 - 2.0 * spec.alpha)).clamp(0.0, 1.0 - 1e-9);
    -2.0 * zeta_below_one(gamma)
}

/// `Z = int int K_alpha(X_t - X_s) <D X_t, D X_s> dt ds` with the truncation
/// convention on `[0, eps)`.
pub fn z_double_integral(path: &FbmPath, table: &KernelTable, scheme: DerivScheme) -> Result<CurrentEstimate> {
    z_double_integral_with(path, table, scheme, BoundaryPolicy::Truncation)
}

pub fn z_double_integral_with(
    path: &FbmPath,
    table: &KernelTable,
    scheme: DerivScheme,
    boundary: BoundaryPolicy,
) -> Result<CurrentEstimate> {
    let nodes = Nodes::new(path, scheme, boundary, MIN_STEPS_PER_EPSILON)?;
    let spec = *table.spec();
    if spec.dim != path.dim() {
        return Err(invalid("alpha", "kernel dimension differs from the path dimension"));
    }
    let policy = diagonal_policy(&spec, path.params.hurst);
    let warning = (policy == DiagonalPolicy::Excluded).then(|| {
        format!(
            "alpha = {} is at or below the integrability threshold {}; diagonal cells excluded",
            spec.alpha,
            condition_b_threshold(path.params.hurst, spec.dim)
        )
    });
    let value = kernel_pair_sum(&nodes, table, policy, path.params.hurst);
    Ok(CurrentEstimate {
        alpha: spec.alpha,
        scheme,
        value,
        n_steps: path.n_steps(),
        step: nodes.dt,
        boundary,
        diagonal: policy,
        seed: path.params.seed,
        warning,
    })
}

fn kernel_pair_sum(nodes: &Nodes, table: &KernelTable, policy: DiagonalPolicy, hurst: f64) -> f64 {
    let k0 = table.k_zero();
    let factor = singular_diagonal_factor(table.spec(), hurst);
    let off = |j: usize, k: usize| table.eval(dist(nodes.x(j), nodes.x(k))) * dot(nodes.d(j), nodes.d(k));
    nodes.pair_sum(
        |j| {
            let dd = dot(nodes.d(j), nodes.d(j));
            match policy {
                DiagonalPolicy::KernelAtOrigin => k0.unwrap_or(0.0) * dd,
                DiagonalPolicy::SingularCorrection => {
                    factor * nodes.neighbour_mean(j, |a, b| table.eval(dist(nodes.x(a), nodes.x(b)))) * dd
                }
                DiagonalPolicy::Excluded => 0.0,
            }
        },
        off,
    )
}

/// `Z(f) = int int f(|X_t - X_s|) <D X_t, D X_s> dt ds` for a radial `f`;
/// `f_zero` is used on the diagonal.
pub fn z_radial(
    path: &FbmPath,
    scheme: DerivScheme,
    boundary: BoundaryPolicy,
    f: impl Fn(f64) -> f64,
    f_zero: f64,
) -> Result<f64> {
    let nodes = Nodes::new(path, scheme, boundary, MIN_STEPS_PER_EPSILON)?;
    Ok(nodes.pair_sum(
        |j| f_zero * dot(nodes.d(j), nodes.d(j)),
        |j, k| f(dist(nodes.x(j), nodes.x(k))) * dot(nodes.d(j), nodes.d(k)),
    ))
}

/// `Z(g) = int int <D X_t, g(X_t - X_s) D X_s> dt ds` for a matrix kernel
/// with `g(-x) = g(x)^T`; `g` writes a row-major `d x d` matrix.
pub fn z_matrix(
    path: &FbmPath,
    scheme: DerivScheme,
    boundary: BoundaryPolicy,
    g: impl Fn(&[f64], &mut [f64]),
) -> Result<f64> {
    let nodes = Nodes::new(path, scheme, boundary, MIN_STEPS_PER_EPSILON)?;
    let d = nodes.dim;
    let zero = vec![0.0; d];
    let quad = |x: &[f64], a: &[f64], b: &[f64]| {
        let mut m = vec![0.0; d * d];
        g(x, &mut m);
        let mut acc = 0.0;
        for i in 0..d {
            for l in 0..d {
                acc += a[i] * m[i * d + l] * b[l];
            }
        }
        acc
    };
    Ok(nodes.pair_sum(
        |j| quad(&zero, nodes.d(j), nodes.d(j)),
        |j, k| {
            let x: Vec<f64> = nodes.x(j).iter().zip(nodes.x(k)).map(|(a, b)| a - b).collect();
            quad(&x, nodes.d(j), nodes.d(k))
        },
    ))
}

/// `I(phi) = int_0^T <phi(X_t), D X_t> dt` by the trapezoidal rule.
pub fn regularized_current(path: &FbmPath, phi: impl Fn(&[f64]) -> Vec<f64>, scheme: DerivScheme) -> Result<f64> {
    let nodes = Nodes::new(path, scheme, BoundaryPolicy::Truncation, 1)?;
    let mut acc = 0.0;
    for j in 0..nodes.len() {
        let v = phi(nodes.x(j));
        if v.len() != nodes.dim {
            return Err(invalid("phi", "vector field dimension differs from the path dimension"));
        }
        acc += nodes.weight(j) * dot(&v, nodes.d(j));
    }
    Ok(acc)
}

/// A regular grid `origin + h * index` with `counts[i]` nodes along axis `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialGrid {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub counts: Vec<usize>,
}

impl SpatialGrid {
    /// The smallest grid of the given spacing containing the path's range on
    /// `[0, T]` widened by `margin` on every side.
    pub fn enclosing(path: &FbmPath, margin: f64, spacing: f64) -> Self {
        let n = path.n_steps();
        let mut origin = Vec::with_capacity(path.dim());
        let mut counts = Vec::with_capacity(path.dim());
        for row in &path.values {
            let lo = row[..=n].iter().cloned().fold(f64::INFINITY, f64::min) - margin;
            let hi = row[..=n].iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
            origin.push(lo);
            counts.push(((hi - lo) / spacing).ceil() as usize + 1);
        }
        Self { origin, spacing, counts }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Coordinates of the node with linear index `idx` (first axis slowest).
    pub fn node(&self, mut idx: usize, out: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let c = idx % self.counts[i];
            idx /= self.counts[i];
            out[i] = self.origin[i] + c as f64 * self.spacing;
        }
    }

    fn is_face(&self, mut idx: usize) -> bool {
        for i in (0..self.dim()).rev() {
            let c = idx % self.counts[i];
            idx /= self.counts[i];
            if c == 0 || c + 1 == self.counts[i] {
                return true;
            }
        }
        false
    }

    /// Distance from the path range on `[0, T]` to the nearest face.
    pub fn margin_for(&self, path: &FbmPath) -> f64 {
        let n = path.n_steps();
        let mut m = f64::INFINITY;
        for (i, row) in path.values.iter().enumerate() {
            let lo = row[..=n].iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row[..=n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let top = self.origin[i] + (self.counts[i] - 1) as f64 * self.spacing;
            m = m.min(lo - self.origin[i]).min(top - hi);
        }
        m
    }
}

/// Minimum box margin, in decay lengths of the kernel.
pub const MIN_GRID_MARGIN: f64 = 4.0;

#[derive(Debug, Clone, Serialize)]
pub struct EtaField {
    pub grid: SpatialGrid,
    /// node-major, `dim` components per node
    pub values: Vec<f64>,
    /// nodes closer to the path than the smallest tabulated radius
    pub flagged_nodes: usize,
}

impl EtaField {
    /// `||eta||^2` by the grid rule, plus an exponential-decay estimate of the
    /// mass outside the box from the boundary faces.
    pub fn l2_norm_sq(&self) -> (f64, f64) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        let mut body = 0.0;
        let mut face = 0.0;
        for (idx, v) in self.values.chunks(d).enumerate() {
            let s = dot(v, v);
            body += s;
            if self.grid.is_face(idx) {
                face += s;
            }
        }
        // |eta|^2 decays like exp(-2 r): the mass beyond a face is about
        // half a decay length times its surface density
        let tail = face * vol / self.grid.spacing * 0.5;
        (body * vol, tail)
    }
}

/// `eta(x) = int_0^T K_{alpha/2}(x - X_t) D X_t dt` on `grid`. `half_table`
/// must hold `K_{alpha/2}`. The path and the derivative are interpolated
/// linearly between nodes, and segments passing close to a grid node are
/// subdivided.
pub fn eta_field(path: &FbmPath, half_table: &KernelTable, scheme: DerivScheme, grid: &SpatialGrid) -> Result<EtaField> {
    let spec = half_table.spec();
    let alpha = 2.0 * spec.alpha;
    let thr = condition_b_threshold(path.params.hurst, path.dim());
    if alpha <= thr {
        return Err(invalid(
            "alpha",
            format!("alpha = {alpha} must exceed the integrability threshold {thr}"),
        ));
    }
    if grid.dim() != path.dim() || spec.dim != path.dim() {
        return Err(invalid("grid", "grid, kernel and path dimensions differ"));
    }
    let margin = grid.margin_for(path);
    if margin < MIN_GRID_MARGIN * (1.0 - 1e-9) {
        let widest = grid.counts.iter().max().copied().unwrap_or(1) - 1;
        let half_width = 0.5 * grid.spacing * widest as f64;
        return Err(Error::BoxTooSmall {
            half_width,
            suggested: half_width + MIN_GRID_MARGIN - margin,
        });
    }
    let nodes = Nodes::new(path, scheme, BoundaryPolicy::Truncation, 1)?;
    let d = nodes.dim;
    let n = nodes.len();
    let h = grid.spacing;
    let r_min = crate::bessel_kernel::TABLE_R_MIN;
    let seg_len: Vec<f64> = (0..n - 1).map(|j| dist(nodes.x(j), nodes.x(j + 1))).collect();

    let results: Vec<(Vec<f64>, bool)> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|idx| {
            let mut x = vec![0.0; d];
            grid.node(idx, &mut x);
            let mut out = vec![0.0; d];
            let mut flagged = false;
            let mut kern = |r: f64| {
                if r < r_min {
                    flagged = true;
                    half_table.eval(r_min)
                } else {
                    half_table.eval(r)
                }
            };
            let rv: Vec<f64> = (0..n).map(|j| dist(&x, nodes.x(j))).collect();
            let kv: Vec<f64> = rv.iter().map(|&r| kern(r)).collect();
            let mut y = vec![0.0; d];
            for j in 0..n - 1 {
                let a = nodes.x(j);
                let b = nodes.x(j + 1);
                let lower = rv[j].min(rv[j + 1]) - seg_len[j];
                let m = if lower >= 4.0 * seg_len[j] {
                    1
                } else {
                    let closest = point_segment_distance(&x, a, b);
                    ((4.0 * seg_len[j] / closest.max(0.25 * h)).ceil() as usize).clamp(1, 64)
                };
                let hs = nodes.dt / m as f64;
                let da = nodes.d(j);
                let db = nodes.d(j + 1);
                for i in 0..d {
                    out[i] += 0.5 * hs * (kv[j] * da[i] + kv[j + 1] * db[i]);
                }
                for q in 1..m {
                    let lam = q as f64 / m as f64;
                    for i in 0..d {
                        y[i] = a[i] + lam * (b[i] - a[i]);
                    }
                    let kq = kern(dist(&x, &y));
                    for i in 0..d {
                        out[i] += hs * kq * (da[i] + lam * (db[i] - da[i]));
                    }
                }
            }
            (out, flagged)
        })
        .collect();
    let flagged_nodes = results.iter().filter(|r| r.1).count();
    let values = results.into_iter().flat_map(|r| r.0).collect();
    Ok(EtaField {
        grid: grid.clone(),
        values,
        flagged_nodes,
    })
}

fn point_segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut vv = 0.0;
    let mut wv = 0.0;
    for i in 0..x.len() {
        let v = b[i] - a[i];
        vv += v * v;
        wv += (x[i] - a[i]) * v;
    }
    let t = if vv > 0.0 { (wv / vv).clamp(0.0, 1.0) } else { 0.0 };
    let mut s = 0.0;
    for i in 0..x.len() {
        let p = a[i] + t * (b[i] - a[i]) - x[i];
        s += p * p;
    }
    s.sqrt()
}

/// Per-path Wick split `Z = A + B1 - B2 + Q` with
/// `A = d int int c K_alpha`, `B1 = int int w K_{alpha-1}`,
/// `B2 = int int w K_alpha` and `w(t, s) = -Cov(D X_t, X_t - X_s) Cov(D X_s, X_t - X_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WickTerms {
    pub a: f64,
    pub b1: Option<f64>,
    pub b2: f64,
    pub q: Option<f64>,
    pub z: f64,
}

/// `lower` holds `K_{alpha-1}` and is required only when `alpha > 1`.
pub fn wick_decompose(
    path: &FbmPath,
    table: &KernelTable,
    lower: Option<&KernelTable>,
    scheme: DerivScheme,
) -> Result<WickTerms> {
    let spec = *table.spec();
    if scheme.kind != SchemeKind::Symmetric {
        return Err(invalid("scheme", "the Wick split is stated for the symmetric scheme"));
    }
    let k0 = table.k_zero().ok_or_else(|| {
        invalid("alpha", format!("alpha = {} must exceed d/2 so the diagonal is bounded", spec.alpha))
    })?;
    let lower = if spec.alpha > 1.0 {
        let l = lower.ok_or_else(|| invalid("lower", "the K_{alpha-1} table is required for alpha > 1"))?;
        if (l.spec().alpha - (spec.alpha - 1.0)).abs() > 1e-12 || l.spec().dim != spec.dim {
            return Err(invalid("lower", "table must hold K_{alpha-1} in the same dimension"));
        }
        Some(l)
    } else {
        None
    };
    let nodes = Nodes::new(path, scheme, BoundaryPolicy::Truncation, MIN_STEPS_PER_EPSILON)?;
    let hurst = path.params.hurst;
    let eps = scheme.epsilon;
    let dim = nodes.dim as f64;
    let time = |j: usize| (nodes.lo + j) as f64 * nodes.dt;
    let z = kernel_pair_sum(&nodes, table, DiagonalPolicy::KernelAtOrigin, 0.5);
    let mut a = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    let n = nodes.len();
    for j in 0..n {
        let wj = nodes.weight(j);
        let (c_diag, _, _) = atoms_diag(scheme.kind, hurst, time(j), eps);
        a += wj * wj * dim * c_diag * k0;
        let (mut ra, mut rb1, mut rb2) = (0.0, 0.0, 0.0);
        for k in (j + 1)..n {
            let wk = nodes.weight(k);
            let (c, bt, bs) = atoms_fast(scheme.kind, hurst, time(k), time(j), eps);
            let r = dist(nodes.x(j), nodes.x(k));
            let kv = table.eval(r);
            let w = -bt * bs;
            ra += wk * dim * c * kv;
            rb2 += wk * w * kv;
            if let Some(l) = lower {
                rb1 += wk * w * l.eval(r);
            }
        }
        a += 2.0 * wj * ra;
        b1 += 2.0 * wj * rb1;
        b2 += 2.0 * wj * rb2;
    }
    let (b1, q) = match lower {
        Some(_) => (Some(b1), Some(z - a - b1 + b2)),
        None => (None, None),
    };
    Ok(WickTerms { a, b1, b2, q, z })
}

/// `Var(D X_t)` for one component; the `b` atoms vanish at coincident times.
fn atoms_diag(kind: SchemeKind, hurst: f64, t: f64, eps: f64) -> (f64, f64, f64) {
    use crate::fbm_analytics::{covariance, LinearFunctional};
    let dt = LinearFunctional::derivative(kind, t, eps);
    (covariance(hurst, &dt, &dt), 0.0, 0.0)
}

/// Which covariance atom weights a stationary time integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    /// `c(t, s) = Cov(D X_t, D X_s)` of one component
    Covariance,
    /// `-Cov(D X_t, X_t - X_s) Cov(D X_s, X_t - X_s)`
    GradientProduct,
}

/// `int int_{[t0, T]^2} atom(t, s) weight(|t - s|) dt ds` where the weight
/// depends on the lag only; `t0 = eps` under the interior-only policy.
/// Returns (value, error estimate, converged).
pub fn pair_time_integral(
    hurst: f64,
    kind: SchemeKind,
    eps: f64,
    horizon: f64,
    boundary: BoundaryPolicy,
    atom: Atom,
    weight: impl Fn(f64) -> f64,
    abs_tol: f64,
) -> Result<(f64, f64, bool)> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(invalid("hurst", "H must lie in (0, 1)"));
    }
    if !(eps > 0.0 && horizon > 0.0) {
        return Err(invalid("epsilon", "eps and T must be positive"));
    }
    let len = match boundary {
        BoundaryPolicy::Truncation => horizon,
        BoundaryPolicy::InteriorOnly => horizon - eps,
    };
    if len <= 0.0 {
        return Err(invalid("epsilon", "interior range is empty"));
    }
    let strip = kind == SchemeKind::Symmetric && boundary == BoundaryPolicy::Truncation;
    let value = |t: f64, s: f64| {
        let (c, bt, bs) = atoms_fast(kind, hurst, t, s, eps);
        match atom {
            Atom::Covariance => c,
            Atom::GradientProduct => -bt * bs,
        }
    };
    // absolute tolerances at the natural scales eps^(2H-2) * eps and eps^(4H-2) * eps
    let scale = match atom {
        Atom::Covariance => 1e-14 * eps.powf(2.0 * hurst - 1.0),
        Atom::GradientProduct => 1e-14 * eps.powf(4.0 * hurst - 1.0),
    };
    // integral of the atom over {(s + tau, s)}: stationary away from the
    // strip [0, eps) where the truncation convention applies
    let lag_integral = |tau: f64| -> f64 {
        let stationary = value(eps + tau, eps);
        if !strip {
            return (len - tau) * stationary;
        }
        let bulk = (len - tau - eps).max(0.0);
        let top = eps.min(len - tau);
        let mut pts = vec![0.0];
        if eps - tau > 0.0 && eps - tau < top {
            pts.push(eps - tau);
        }
        pts.push(top);
        let near = Integrator::new(1e-11)
            .with_abs_tol(scale)
            .integrate_breaks(|s| value(s + tau, s), &pts);
        bulk * stationary + near.value
    };
    let integrand = |tau: f64| if tau <= 0.0 { 0.0 } else { lag_integral(tau) * weight(tau) };

    // [0, e0] in the variable u = ln(e0 / tau) up to U, where the remaining
    // mass of the power-law singularity is added in closed form; the rest
    // with breakpoints at the kinks of the atoms
    let e0 = eps.min(len);
    const U_MAX: f64 = 40.0;
    let integ = Integrator::new(1e-8).with_abs_tol(abs_tol).with_max_panels(400);
    let head_f = |u: f64| {
        let tau = e0 * (-u).exp();
        tau * integrand(tau)
    };
    let head = integ.integrate_breaks(head_f, &[0.0, 1.0, 2.0, 4.0, 8.0, 16.0, U_MAX]);
    // tau G(tau) ~ C exp(-k u) near U_MAX; its integral beyond is value / k
    let (g1, g2) = (head_f(U_MAX - 1.0), head_f(U_MAX));
    let tail = if g1 != 0.0 && g2 / g1 > 0.0 && g2 / g1 < 1.0 {
        g2 / (g1 / g2).ln()
    } else {
        0.0
    };
    let mut pts: Vec<f64> = vec![e0, 2.0 * eps, len - eps, len]
        .into_iter()
        .filter(|&p| p >= e0 && p <= len)
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let body = integ.integrate_breaks(integrand, &pts);
    Ok((
        2.0 * (head.value + tail + body.value),
        2.0 * (head.abs_error + tail.abs() + body.abs_error),
        head.converged && body.converged,
    ))
}

/// Deterministic `E Z` and its split into the derivative-covariance part
/// and the Laplacian part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactExpectation {
    pub value: f64,
    pub a_term: f64,
    pub b_term: f64,
    pub abs_error: f64,
    pub boundary: BoundaryPolicy,
    pub converged: bool,
}

/// `E Z = int int [ d c(t,s) m(tau) - b_t b_s m_lap(tau) ] dt ds` where
/// `m(sigma-scale) = E K_alpha(tau^H N)` and `m_lap = E[-Laplacian K_alpha(tau^H N)]`.
/// Finite exactly when `alpha` exceeds the integrability threshold.
pub fn expected_z_exact(
    hurst: f64,
    dim: usize,
    alpha: f64,
    kind: SchemeKind,
    eps: f64,
    horizon: f64,
) -> Result<ExactExpectation> {
    let table = KernelTable::new(KernelSpec::new(alpha, dim)?);
    expected_z_exact_with(&table, hurst, kind, eps, horizon, BoundaryPolicy::Truncation)
}

pub fn expected_z_exact_with(
    table: &KernelTable,
    hurst: f64,
    kind: SchemeKind,
    eps: f64,
    horizon: f64,
    boundary: BoundaryPolicy,
) -> Result<ExactExpectation> {
    let spec = *table.spec();
    let dim = spec.dim;
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(invalid("hurst", "H must lie in (0, 1)"));
    }
    if !(eps > 0.0 && horizon > 0.0) {
        return Err(invalid("epsilon", "eps and T must be positive"));
    }
    let thr = condition_b_threshold(hurst, dim);
    if spec.alpha <= thr {
        return Err(Error::Divergent(format!(
            "E Z is infinite for alpha = {} <= {thr}",
            spec.alpha
        )));
    }
    let d = dim as f64;
    let err_cell = std::cell::Cell::new(None::<Error>);
    let record = |r: Result<f64>| {
        r.unwrap_or_else(|e| {
            err_cell.set(Some(e));
            0.0
        })
    };
    let (a_term, ea, ca) = pair_time_integral(
        hurst,
        kind,
        eps,
        horizon,
        boundary,
        Atom::Covariance,
        |tau| d * record(gaussian_expectation_k(table, tau.powf(hurst))),
        1e-300,
    )?;
    let (b_term, eb, cb) = pair_time_integral(
        hurst,
        kind,
        eps,
        horizon,
        boundary,
        Atom::GradientProduct,
        |tau| record(gaussian_expectation_neg_laplacian(table, tau.powf(hurst))),
        1e-10 * a_term.abs(),
    )?;
    if let Some(e) = err_cell.take() {
        return Err(e);
    }
    Ok(ExactExpectation {
        value: a_term + b_term,
        a_term,
        b_term,
        abs_error: ea + eb,
        boundary,
        converged: ca && cb,
    })
}

/// Grid resolution and path count for Monte Carlo estimates of `E Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_replicas: usize,
    pub seed: u64,
    pub steps_per_epsilon: usize,
    pub boundary: BoundaryPolicy,
}

impl McSettings {
    pub fn new(n_replicas: usize, seed: u64) -> Self {
        Self {
            n_replicas,
            seed,
            steps_per_epsilon: 8,
            boundary: BoundaryPolicy::Truncation,
        }
    }
}

pub const MIN_MC_REPLICAS: usize = 30;

/// Time grid with `steps_per_epsilon` steps per `eps`, padded for the scheme.
pub fn mc_path_params(hurst: f64, dim: usize, eps: f64, horizon: f64, steps_per_epsilon: usize) -> Result<FbmParams> {
    let n = horizon / eps * steps_per_epsilon as f64;
    let n_steps = n.round() as usize;
    if (n - n_steps as f64).abs() > 1e-9 * n {
        return Err(Error::MisalignedEpsilon {
            requested: eps,
            step: horizon / n_steps as f64,
            nearest: horizon / n_steps as f64 * steps_per_epsilon as f64,
        });
    }
    let p = FbmParams::new(hurst, dim, horizon, n_steps, 0).padded_for(eps);
    p.validate()?;
    Ok(p)
}

/// Monte Carlo mean of per-path `Z` over independent replicas.
pub fn mc_expected_z(
    table: &KernelTable,
    hurst: f64,
    kind: SchemeKind,
    eps: f64,
    horizon: f64,
    settings: McSettings,
) -> Result<MCResult> {
    if settings.n_replicas < MIN_MC_REPLICAS {
        return Err(Error::TooFewSamples {
            needed: MIN_MC_REPLICAS,
            got: settings.n_replicas,
        });
    }
    let params = mc_path_params(hurst, table.spec().dim, eps, horizon, settings.steps_per_epsilon)?;
    let scheme = DerivScheme::new(kind, eps);
    let samples: Vec<f64> = (0..settings.n_replicas as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_fbm(params.with_seed(derive_seed(settings.seed, i)))?;
            Ok(z_double_integral_with(&path, table, scheme, settings.boundary)?.value)
        })
        .collect::<Result<_>>()?;
    Ok(MCResult::from_samples(&samples, settings.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Bounded,
    Diverging,
}

/// Slope dead-band separating the two classes.
pub const SLOPE_DEAD_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub epsilon: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// least-squares slope of `ln E Z` against `ln(1/eps)` over the finer half of the grid
    pub slope: f64,
    /// limit of the local slopes between consecutive grid points, by Aitken
    /// extrapolation when they converge geometrically
    pub extrapolated_slope: f64,
    /// max / min of `E Z` over the whole grid
    pub ratio: f64,
    pub class: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub hurst: f64,
    pub dim: usize,
    pub scheme: SchemeKind,
    pub mode: SweepMode,
    pub alpha_h: f64,
    pub rows: Vec<SweepRow>,
    pub fits: Vec<AlphaFit>,
}

pub const MIN_SWEEP_EPSILONS: usize = 4;

/// `E Z` over an `(alpha, eps)` grid with a per-alpha trend classification.
/// `mc` supplies replica settings when `mode` is `Mc`.
pub fn threshold_sweep(
    hurst: f64,
    dim: usize,
    alphas: &[f64],
    epsilons: &[f64],
    kind: SchemeKind,
    mode: SweepMode,
    horizon: f64,
    mc: Option<McSettings>,
) -> Result<SweepTable> {
    if kind == SchemeKind::Forward && hurst < 0.5 {
        return Err(Error::ForwardSchemeUnsupported { hurst });
    }
    if epsilons.len() < MIN_SWEEP_EPSILONS {
        return Err(invalid(
            "epsilons",
            format!("need at least {MIN_SWEEP_EPSILONS} values, got {}", epsilons.len()),
        ));
    }
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &alpha in alphas {
        let table = KernelTable::new(KernelSpec::new(alpha, dim)?);
        let mut vals = Vec::with_capacity(eps.len());
        for &e in &eps {
            let (value, stderr) = match mode {
                SweepMode::Exact => {
                    let r = expected_z_exact_with(&table, hurst, kind, e, horizon, BoundaryPolicy::Truncation)?;
                    (r.value, r.abs_error)
                }
                SweepMode::Mc => {
                    let s = mc.ok_or_else(|| invalid("mc", "Monte Carlo settings are required"))?;
                    let r = mc_expected_z(&table, hurst, kind, e, horizon, s)?;
                    (r.mean, r.stderr)
                }
            };
            rows.push(SweepRow {
                alpha,
                epsilon: e,
                value,
                stderr,
            });
            vals.push(value);
        }
        let half = eps.len() / 2;
        let xs: Vec<f64> = eps[half..].iter().map(|e| -e.ln()).collect();
        let ys: Vec<f64> = vals[half..].iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
        let slope = least_squares_slope(&xs, &ys);
        let local: Vec<f64> = eps
            .windows(2)
            .zip(vals.windows(2))
            .map(|(e, v)| (v[1] / v[0]).ln() / (e[0] / e[1]).ln())
            .collect();
        let extrapolated_slope = aitken_limit(&local);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        // Monte Carlo noise makes second differences of slopes unreliable
        let decisive = match mode {
            SweepMode::Exact => extrapolated_slope,
            SweepMode::Mc => slope,
        };
        fits.push(AlphaFit {
            alpha,
            slope,
            extrapolated_slope,
            ratio: max / min,
            class: if decisive > SLOPE_DEAD_BAND {
                Classification::Diverging
            } else {
                Classification::Bounded
            },
        });
    }
    Ok(SweepTable {
        hurst,
        dim,
        scheme: kind,
        mode,
        alpha_h: alpha_h(hurst, dim),
        rows,
        fits,
    })
}

/// Aitken extrapolation of the last three terms when they approach their
/// limit geometrically; otherwise the last term.
pub fn aitken_limit(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n < 3 {
        return seq.last().copied().unwrap_or(f64::NAN);
    }
    let (a, b, c) = (seq[n - 3], seq[n - 2], seq[n - 1]);
    let (d1, d2) = (b - a, c - b);
    let q = d2 / d1;
    if d1 != 0.0 && q > 0.0 && q < 1.0 {
        c + d2 * q / (1.0 - q)
    } else {
        c
    }
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeta_matches_known_values() {
        assert_relative_eq!(zeta_below_one(0.0), -0.5, epsilon = 1e-13);
        assert_relative_eq!(zeta_below_one(0.5), -1.4603545088095868, max_relative = 1e-12);
        // pole residue: zeta(s) (s - 1) -> 1
        assert_relative_eq!(zeta_below_one(0.999) * (0.999 - 1.0), 1.0, max_relative = 1e-3);
    }

    fn line_path(n: usize, pad: usize, slope: f64) -> FbmPath {
        let mut p = FbmParams::new(0.5, 1, 1.0, n, 0);
        p.pad_steps = pad;
        let dt = p.step();
        let values = vec![(0..p.total_nodes()).map(|k| slope * k as f64 * dt).collect()];
        FbmPath::from_values(p, values).unwrap()
    }

    #[test]
    fn zero_path_gives_zero() {
        let mut p = FbmParams::new(0.5, 3, 1.0, 40, 0);
        p.pad_steps = 8;
        let path = FbmPath::from_values(p, vec![vec![0.0; p.total_nodes()]; 3]).unwrap();
        let table = KernelTable::new(KernelSpec::new(2.0, 3).unwrap());
        let z = z_double_integral(&path, &table, DerivScheme::symmetric(0.2)).unwrap();
        assert_eq!(z.value, 0.0);
        let i = regularized_current(&path, |x| x.to_vec(), DerivScheme::forward(0.1)).unwrap();
        assert_eq!(i, 0.0);
    }

    #[test]
    fn constant_kernel_gives_squared_displacement() {
        let (n, m) = (400usize, 8usize);
        let eps = m as f64 / n as f64;
        let path = crate::gaussian_paths::sample_fbm(FbmParams::new(0.5, 2, 1.0, n, 3).padded_for(eps)).unwrap();
        let dt = path.step();
        // trapezoid sum of (X_{k+m} - X_k) / eps over 0..=n
        let w = |k: usize| if k == 0 || k == n { 0.5 * dt } else { dt };
        let oracle: f64 = (0..2)
            .map(|i| {
                let x = &path.values[i];
                let s: f64 = (0..=n).map(|k| w(k) * (x[k + m] - x[k])).sum::<f64>() / eps;
                s * s
            })
            .sum();
        let z = z_radial(&path, DerivScheme::forward(eps), BoundaryPolicy::Truncation, |_| 1.0, 1.0).unwrap();
        assert_relative_eq!(z, oracle, max_relative = 1e-10);
        let k0 = crate::bessel_kernel::eval_k_zero(&KernelSpec::new(2.0, 2).unwrap()).unwrap();
        let zk = z_radial(&path, DerivScheme::forward(eps), BoundaryPolicy::Truncation, |_| k0, k0).unwrap();
        assert_relative_eq!(zk, k0 * z, max_relative = 1e-12);
    }

    #[test]
    fn constant_kernel_limit_is_squared_endpoint() {
        // averaged over paths, |int D X dt|^2 - |X_T|^2 shrinks with eps
        let mut gaps = Vec::new();
        for m in [64usize, 16, 4] {
            let n = 512usize;
            let eps = m as f64 / n as f64;
            let params = FbmParams::new(0.5, 2, 1.0, n, 0).padded_for(eps);
            let paths = crate::gaussian_paths::sample_fbm_batch(params, 200, 41).unwrap();
            let mean: f64 = paths
                .iter()
                .map(|p| {
                    let z = z_radial(p, DerivScheme::forward(eps), BoundaryPolicy::Truncation, |_| 1.0, 1.0).unwrap();
                    let xt: f64 = (0..2).map(|i| p.values[i][n].powi(2)).sum();
                    (z - xt).abs()
                })
                .sum::<f64>()
                / 200.0;
            gaps.push(mean);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn forward_current_of_constant_field_telescopes() {
        let path = crate::gaussian_paths::sample_fbm(FbmParams::new(0.7, 1, 1.0, 200, 9).padded_for(0.05)).unwrap();
        let exact = path.values[0][200];
        let mut prev = f64::INFINITY;
        for eps in [0.05, 0.02, 0.01] {
            let i = regularized_current(&path, |_| vec![1.0], DerivScheme::forward(eps)).unwrap();
            let gap = (i - exact).abs();
            assert!(gap <= prev + 1e-12);
            prev = gap;
        }
        assert!(prev < 0.2);
    }

    #[test]
    fn eta_of_straight_line_matches_closed_form() {
        // X_t = t, forward derivative identically one, K_1(r) = exp(-|r|)/2 in d = 1
        let path = line_path(200, 10, 1.0);
        let table = KernelTable::new(KernelSpec::new(1.0, 1).unwrap());
        let grid = SpatialGrid::enclosing(&path, 5.0, 0.05);
        let eta = eta_field(&path, &table, DerivScheme::forward(0.05), &grid).unwrap();
        let mut x = [0.0];
        let mut worst: f64 = 0.0;
        for idx in 0..grid.n_nodes() {
            grid.node(idx, &mut x);
            let exact = if x[0] < 0.0 {
                0.5 * ((x[0]).exp() - (x[0] - 1.0).exp())
            } else if x[0] > 1.0 {
                0.5 * ((1.0 - x[0]).exp() - (-x[0]).exp())
            } else {
                1.0 - 0.5 * (-x[0]).exp() - 0.5 * (x[0] - 1.0).exp()
            };
            worst = worst.max((eta.values[idx] - exact).abs());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn eta_rejects_small_box() {
        let path = line_path(40, 10, 1.0);
        let table = KernelTable::new(KernelSpec::new(1.0, 1).unwrap());
        let grid = SpatialGrid::enclosing(&path, 1.0, 0.1);
        let err = eta_field(&path, &table, DerivScheme::forward(0.1), &grid).unwrap_err();
        assert!(matches!(err, Error::BoxTooSmall { .. }));
    }

    #[test]
    fn epsilon_must_span_four_steps() {
        let path = line_path(20, 4, 1.0);
        let table = KernelTable::new(KernelSpec::new(1.0, 1).unwrap());
        assert!(z_double_integral(&path, &table, DerivScheme::forward(0.1)).is_err());
    }

    #[test]
    fn exact_expectation_for_brownian_forward_scheme() {
        // H = 1/2, forward: b_t = 0 and c(tau) = (eps - tau)_+ / eps^2, so
        // E Z = 2 d int_0^eps (T - tau) (eps - tau) / eps^2 m(sqrt(tau)) dtau
        let (d, alpha, eps, t) = (1usize, 1.0, 0.1, 1.0);
        let table = KernelTable::new(KernelSpec::new(alpha, d).unwrap());
        let r = expected_z_exact_with(&table, 0.5, SchemeKind::Forward, eps, t, BoundaryPolicy::Truncation).unwrap();
        // m(sigma) = E exp(-sigma |N|) / 2 for K_1 in d = 1
        let m = |s: f64| {
            let inner = Integrator::new(1e-12).integrate_to_infinity(
                |r: f64| (-s * r).exp() * (-0.5 * r * r).exp() * (2.0 / std::f64::consts::PI).sqrt(),
                0.0,
            );
            0.5 * inner.value
        };
        let oracle = Integrator::new(1e-10)
            .integrate(|tau| 2.0 * (t - tau) * (eps - tau) / (eps * eps) * m(tau.sqrt()), 0.0, eps)
            .value;
        assert_relative_eq!(r.value, oracle, max_relative = 1e-6);
        assert!(r.b_term.abs() < 1e-12);
    }

    #[test]
    fn expectation_decreases_in_alpha() {
        let mut prev = f64::INFINITY;
        for alpha in [1.6, 2.0, 2.5, 3.0] {
            let v = expected_z_exact(0.5, 3, alpha, SchemeKind::Symmetric, 0.1, 1.0).unwrap().value;
            assert!(v < prev, "{alpha}: {v} vs {prev}");
            prev = v;
        }
    }

    #[test]
    fn forward_below_half_is_rejected() {
        let err = threshold_sweep(0.3, 3, &[2.0], &[0.1, 0.05, 0.025, 0.0125], SchemeKind::Forward, SweepMode::Exact, 1.0, None)
            .unwrap_err();
        assert!(matches!(err, Error::ForwardSchemeUnsupported { .. }));
        let err = threshold_sweep(0.5, 3, &[2.0], &[0.1, 0.05], SchemeKind::Symmetric, SweepMode::Exact, 1.0, None)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn aitken_recovers_geometric_limit() {
        let seq: Vec<f64> = (0..6).map(|k| 0.3 + 0.8 * 0.7f64.powi(k)).collect();
        assert_relative_eq!(aitken_limit(&seq), 0.3, max_relative = 1e-12);
        assert_eq!(aitken_limit(&[1.0, 2.0, 3.0]), 3.0);
    }

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x - 2.0).collect();
        assert_relative_eq!(least_squares_slope(&xs, &ys), 0.7, max_relative = 1e-12);
    }
}
