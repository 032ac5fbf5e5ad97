//! Monte Carlo bookkeeping shared by the oracles.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::rng;

/// Sample mean with its standard error `s / sqrt(n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_samples(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
            seed,
        }
    }

    /// `|value - mean| / std_error`; zero when both the gap and the error vanish.
    pub fn z_score(&self, value: f64) -> f64 {
        let gap = (value - self.mean).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.std_error
        }
    }

    pub fn agrees_with(&self, value: f64, n_se: f64) -> bool {
        (value - self.mean).abs() <= n_se * self.std_error
    }
}

/// Evaluates `f` on samples `0..n` in parallel, sample `i` drawing from
/// stream `i` of `seed`. The reduction runs in index order.
pub fn monte_carlo<F>(n: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| f(&mut rng::stream_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&values, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error_of_known_sample() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(e.mean, 2.5);
        let var: f64 = 5.0 / 3.0;
        assert!((e.std_error - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_sample_has_zero_error() {
        let e = McEstimate::from_samples(&[0.0; 10], 0);
        assert_eq!(e.std_error, 0.0);
        assert!(e.agrees_with(0.0, 3.0));
        assert_eq!(e.z_score(0.0), 0.0);
    }

    #[test]
    fn monte_carlo_is_schedule_independent() {
        use rand::Rng;
        let a = monte_carlo(1000, 9, |r| Ok(r.random::<f64>())).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo(1000, 9, |r| Ok(r.random::<f64>())).unwrap());
        assert_eq!(a, b);
    }
}
