//! Adaptive Gauss–Kronrod quadrature and fixed Gauss–Legendre rules.

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// One Gauss–Kronrod 21 panel: returns (kronrod estimate, error estimate).
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let fsum = f(center - dx) + f(center + dx);
        resk += WGK[j] * fsum;
        if j % 2 == 1 {
            resg += WG[j / 2] * fsum;
        }
    }
    let value = resk * half;
    let err = ((resk - resg) * half).abs();
    (value, err)
}

/// Globally adaptive integrator (bisects the panel with the largest error).
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_panels: 4000,
        }
    }
}

impl Integrator {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_panels(mut self, max_panels: usize) -> Self {
        self.max_panels = max_panels;
        self
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> QuadResult {
        self.integrate_breaks(f, &[a, b])
    }

    /// Integrate over consecutive intervals given by sorted `points`; the
    /// error budget is shared across all pieces.
    pub fn integrate_breaks<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> QuadResult {
        let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
        for w in points.windows(2) {
            if w[1] > w[0] {
                let (v, e) = gk21(&f, w[0], w[1]);
                panels.push((w[0], w[1], v, e));
            }
        }
        let mut evaluations = 21 * panels.len();
        let mut total: f64 = panels.iter().map(|p| p.2).sum();
        let mut err: f64 = panels.iter().map(|p| p.3).sum();
        let finish = |panels: &[(f64, f64, f64, f64)], evaluations, converged| QuadResult {
            value: panels.iter().map(|p| p.2).sum(),
            abs_error: panels.iter().map(|p| p.3).sum(),
            evaluations,
            converged,
        };
        loop {
            let tol = self.abs_tol.max(self.rel_tol * total.abs());
            if err <= tol || panels.is_empty() {
                return finish(&panels, evaluations, true);
            }
            if panels.len() >= self.max_panels {
                return finish(&panels, evaluations, false);
            }
            let (idx, _) = panels
                .iter()
                .enumerate()
                .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
                .expect("non-empty");
            let (a, b, v0, e0) = panels.swap_remove(idx);
            total -= v0;
            err -= e0;
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                // panel exhausted at machine resolution
                panels.push((a, b, v0, 0.0));
                total += v0;
                continue;
            }
            let (v1, e1) = gk21(&f, a, mid);
            let (v2, e2) = gk21(&f, mid, b);
            evaluations += 42;
            panels.push((a, mid, v1, e1));
            panels.push((mid, b, v2, e2));
            total += v1 + v2;
            err = (err + e1 + e2).max(0.0);
        }
    }

    /// Integrate over `[a, inf)` through the map `x = a + u / (1 - u)`.
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64) -> QuadResult {
        let g = |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - u;
            let x = a + u / one_minus;
            let v = f(x) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        };
        self.integrate(g, 0.0, 1.0)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Trapezoidal weights for `n + 1` equally spaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let r = Integrator::default().integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0);
        assert_relative_eq!(r.value, (64.0 - 1.0) / 6.0 - 9.0, max_relative = 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let r = Integrator::new(1e-10).integrate(|x| x.powf(-0.5), 0.0, 1.0);
        assert!(r.converged);
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn semi_infinite_gaussian() {
        let r = Integrator::new(1e-12).integrate_to_infinity(|x| (-x * x).exp(), 0.0);
        assert_relative_eq!(r.value, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-11);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-13);
            let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
            if n >= 3 {
                assert_relative_eq!(m4, 0.4, max_relative = 1e-12);
            }
        }
    }
}
