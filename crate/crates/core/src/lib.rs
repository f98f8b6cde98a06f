//! Regularized stochastic currents of d-dimensional fractional Brownian
//! motion.
//!
//! The crate computes the Bessel-potential kernels `K_alpha`, samples fBm
//! paths exactly, evaluates the double integrals
//! `Z_{alpha,eps} = int int K_alpha(X_t - X_s) <D_eps X_t, D_eps X_s> dt ds`
//! per path and in expectation, and measures the kinetic energy of random
//! vortex filaments carried by fBm.

pub mod bessel_kernel;
pub mod brownian_checks;
pub mod current_functionals;
pub mod error;
pub mod experiment;
pub mod fbm_analytics;
pub mod gaussian_paths;
pub mod gaussian_wick;
pub mod mc;
pub mod quadrature;
pub mod rng;
pub mod vortex_energy;

pub use error::{Error, Result};
pub use mc::MCResult;
