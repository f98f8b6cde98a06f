//! Monte Carlo results and deterministic replica-parallel execution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{replica_rng, ReplicaRng};

/// A Monte Carlo estimate together with the metadata needed to reproduce it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub mean: f64,
    pub stderr: f64,
    pub std_dev: f64,
    pub n_replicas: usize,
    pub base_seed: u64,
}

impl MCResult {
    /// Aggregate samples in index order (two-pass, so the result does not
    /// depend on how replicas were scheduled).
    pub fn from_samples(samples: &[f64], base_seed: u64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        Self {
            mean,
            stderr: std_dev / (n as f64).sqrt(),
            std_dev,
            n_replicas: n,
            base_seed,
        }
    }

    /// |mean - target| measured in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / self.stderr
        }
    }

    pub fn within(&self, target: f64, n_sigma: f64) -> bool {
        self.z_score(target) <= n_sigma
    }
}

/// Run `n` replicas in parallel, each with its own derived generator; the
/// output vector is ordered by replica index.
pub fn run_replicas<T, F>(n: usize, base_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ReplicaRng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(base_seed, i);
            f(i, &mut rng)
        })
        .collect()
}

/// Run a closure inside a dedicated pool with the given thread count.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn aggregation_is_thread_invariant() {
        let run = |t| {
            with_threads(t, || {
                let xs = run_replicas(1000, 99, |_, rng| rng.gen::<f64>());
                MCResult::from_samples(&xs, 99)
            })
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let r = MCResult::from_samples(&[2.5; 10], 0);
        assert_eq!(r.mean, 2.5);
        assert_eq!(r.stderr, 0.0);
        assert!(r.within(2.5, 0.0));
    }
}
