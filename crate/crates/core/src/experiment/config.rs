//! Strict run configuration. Every table rejects unknown keys; missing keys
//! take the defaults below, which are the acceptance-level settings.

use serde::{Deserialize, Serialize};

use crate::gaussian_paths::SchemeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub plots: bool,
    pub kernel_check: KernelCheckConfig,
    pub cov_table: CovTableConfig,
    pub fbm_sample: FbmSampleConfig,
    pub current_sweep: CurrentSweepConfig,
    pub wick_check: WickCheckConfig,
    pub wick_decompose: WickDecomposeConfig,
    pub eta_field: EtaFieldConfig,
    pub vortex_energy: VortexConfig,
    pub brownian_check: BrownianConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 20240611,
            plots: true,
            kernel_check: Default::default(),
            cov_table: Default::default(),
            fbm_sample: Default::default(),
            current_sweep: Default::default(),
            wick_check: Default::default(),
            wick_decompose: Default::default(),
            eta_field: Default::default(),
            vortex_energy: Default::default(),
            brownian_check: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCheckConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_points: usize,
    /// `(d, alpha)` pairs written to the profile table
    pub profiles: Vec<(usize, f64)>,
    pub semigroup_half_width: f64,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self {
            r_min: 0.05,
            r_max: 5.0,
            n_points: 20,
            profiles: vec![(1, 1.0), (2, 1.0), (3, 1.0), (3, 2.0), (3, 0.75)],
            semigroup_half_width: 14.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovTableConfig {
    pub hurst: Vec<f64>,
    pub taus: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Monte Carlo check of the derivative covariances
    pub mc_hurst: Vec<f64>,
    pub mc_paths: usize,
    pub mc_steps: usize,
    pub mc_eps_steps: usize,
    /// `(t, s)` pairs for the Monte Carlo check
    pub mc_pairs: Vec<(f64, f64)>,
}

impl Default for CovTableConfig {
    fn default() -> Self {
        Self {
            hurst: vec![0.3, 0.5, 0.7],
            // dyadic so that `s + tau` is exact: the Phi form is ill-conditioned
            // at `k eps = tau` when 2H < 1
            taus: vec![0.03125, 0.0625, 0.125, 0.25, 0.5, 0.75],
            epsilons: vec![0.0078125, 0.015625, 0.03125, 0.0625],
            mc_hurst: vec![0.3, 0.7],
            mc_paths: 10_000,
            mc_steps: 256,
            mc_eps_steps: 8,
            mc_pairs: vec![(0.5, 0.25), (0.75, 0.5), (0.5, 0.46875), (0.875, 0.125)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbmSampleConfig {
    pub hurst: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub pairs: Vec<(f64, f64)>,
    /// paths written out per H
    pub export_paths: usize,
}

impl Default for FbmSampleConfig {
    fn default() -> Self {
        Self {
            hurst: vec![0.3, 0.5, 0.7],
            n_paths: 10_000,
            n_steps: 256,
            pairs: vec![
                (0.125, 0.125),
                (0.25, 0.5),
                (0.5, 0.5),
                (0.25, 0.75),
                (0.5, 1.0),
                (0.75, 1.0),
                (1.0, 1.0),
                (0.0625, 0.9375),
                (0.375, 0.390625),
                (0.8125, 0.59375),
            ],
            export_paths: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub hurst: f64,
    pub scheme: SchemeKind,
    pub alphas: Vec<f64>,
    /// also require `ratio < 2` for bounded and `slope > 0.2` for diverging
    #[serde(default)]
    pub strict_trend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurrentSweepConfig {
    pub dim: usize,
    pub horizon: f64,
    pub epsilon_exponents: Vec<i32>,
    pub sweeps: Vec<SweepSpec>,
    pub oracle_hurst: Vec<f64>,
    pub oracle_epsilons: Vec<f64>,
    pub oracle_replicas: usize,
    pub oracle_steps_per_eps: usize,
    pub ordering_alphas: Vec<f64>,
    pub ordering_seeds: usize,
    pub ordering_steps: usize,
    pub ordering_eps: f64,
    /// Monte Carlo sweep, run only without `--quick`
    pub mc_sweep_replicas: usize,
}

impl Default for CurrentSweepConfig {
    fn default() -> Self {
        let sweep = |hurst: f64, scheme, alphas: Vec<f64>, strict_trend| SweepSpec {
            hurst,
            scheme,
            alphas,
            strict_trend,
        };
        Self {
            dim: 3,
            horizon: 1.0,
            epsilon_exponents: (3..=9).collect(),
            sweeps: vec![
                sweep(0.5, SchemeKind::Symmetric, vec![2.0, 1.0], true),
                sweep(0.35, SchemeKind::Symmetric, vec![], false),
                sweep(0.5, SchemeKind::Forward, vec![2.0, 1.0], false),
                sweep(0.7, SchemeKind::Forward, vec![], false),
            ],
            oracle_hurst: vec![0.3, 0.5, 0.7],
            oracle_epsilons: vec![0.1, 0.05],
            oracle_replicas: 1000,
            oracle_steps_per_eps: 4,
            ordering_alphas: vec![1.2, 1.6, 2.0, 2.5],
            ordering_seeds: 20,
            ordering_steps: 160,
            ordering_eps: 0.05,
            mc_sweep_replicas: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WickCheckConfig {
    pub sample_scale: f64,
    pub characteristic_samples: usize,
    pub characteristic_t: Vec<f64>,
}

impl Default for WickCheckConfig {
    fn default() -> Self {
        Self {
            sample_scale: 1.0,
            characteristic_samples: 1_000_000,
            characteristic_t: vec![0.2, -0.1, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WickDecomposeConfig {
    pub hurst: f64,
    pub dim: usize,
    pub alpha: f64,
    pub eps: f64,
    pub steps_per_eps: usize,
    pub replicas: usize,
}

impl Default for WickDecomposeConfig {
    fn default() -> Self {
        Self {
            hurst: 0.5,
            dim: 3,
            alpha: 2.0,
            eps: 0.05,
            steps_per_eps: 4,
            replicas: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaFieldConfig {
    pub hurst: f64,
    pub dim: usize,
    pub alpha: f64,
    pub eps: f64,
    pub n_steps: usize,
    pub spacing: f64,
    pub margin: f64,
    pub seeds: Vec<u64>,
}

impl Default for EtaFieldConfig {
    fn default() -> Self {
        Self {
            hurst: 0.5,
            dim: 3,
            alpha: 2.0,
            eps: 0.05,
            n_steps: 80,
            spacing: 0.125,
            margin: 4.0,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VortexConfig {
    pub sigma: f64,
    pub dipole_sigmas: (f64, f64),
    pub sobolev_alpha: f64,
    pub spectral_hurst: f64,
    pub sweep_hurst: f64,
    pub sweep_epsilons: Vec<f64>,
    pub mc_hurst: f64,
    pub mc_eps: f64,
    pub mc_steps_per_eps: usize,
    pub mc_replicas: usize,
    /// grid cross-checks of the per-path energy, run only without `--quick`
    pub parseval_paths: usize,
    pub parseval_spacing: f64,
}

impl Default for VortexConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            dipole_sigmas: (1.0, 2.0),
            sobolev_alpha: 2.0,
            spectral_hurst: 0.5,
            sweep_hurst: 0.4,
            sweep_epsilons: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            mc_hurst: 0.5,
            mc_eps: 0.05,
            mc_steps_per_eps: 4,
            mc_replicas: 1000,
            parseval_paths: 2,
            parseval_spacing: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrownianConfig {
    pub moment_dim: usize,
    pub moment_theta: f64,
    pub moment_q: f64,
    pub moment_paths: Vec<usize>,
    pub moment_steps: usize,
    pub far_distances: Vec<f64>,
    pub exceedance_dim: usize,
    pub exceedance_radii: Vec<f64>,
    pub exceedance_paths: usize,
    pub exceedance_steps: usize,
    pub occupation_dim: usize,
    pub occupation_alpha: f64,
    pub occupation_p_prime: f64,
    pub occupation_paths: usize,
}

impl Default for BrownianConfig {
    fn default() -> Self {
        Self {
            moment_dim: 3,
            moment_theta: 0.5,
            moment_q: 1.2,
            moment_paths: vec![1000, 4000],
            moment_steps: 200,
            far_distances: vec![8.0, 16.0, 32.0, 64.0],
            exceedance_dim: 3,
            exceedance_radii: vec![2.0, 4.0, 8.0],
            exceedance_paths: 10_000,
            exceedance_steps: 1000,
            occupation_dim: 2,
            occupation_alpha: 1.8,
            occupation_p_prime: 1.5,
            occupation_paths: 4000,
        }
    }
}

/// A configuration error with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key_path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error at `{}`: {}", self.key_path, self.message)
    }
}

/// Parse TOML text strictly.
pub fn parse_config(text: &str) -> std::result::Result<Config, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut key_path = e.path().to_string();
        let message = e.inner().message().to_string();
        // depending on the toml features in the build, unknown keys are
        // reported against either their parent table or themselves
        if let Some(name) = message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
            let already = key_path == name || key_path.ends_with(&format!(".{name}"));
            if !already {
                key_path = if key_path == "." || key_path.is_empty() {
                    name.to_string()
                } else {
                    format!("{key_path}.{name}")
                };
            }
        }
        ConfigError { key_path, message }
    })
}
