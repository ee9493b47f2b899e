//! Monte Carlo point estimates and deterministic replica fan-out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
    pub method: String,
}

impl Estimate {
    /// Sample mean and standard error of the mean. Summation runs in index order.
    pub fn from_samples(samples: &[f64], seed: u64, method: &str) -> Self {
        let n = samples.len();
        assert!(n >= 1, "an estimate needs at least one replica");
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, replicas: n, seed, method: method.to_string() }
    }

    /// Binomial proportion with the plug-in standard error.
    pub fn proportion(successes: usize, replicas: usize, seed: u64, method: &str) -> Self {
        assert!(replicas >= 1);
        let p = successes as f64 / replicas as f64;
        Self { mean: p, stderr: (p * (1.0 - p) / replicas as f64).sqrt(), replicas, seed, method: method.to_string() }
    }

    /// A value known without sampling error.
    pub fn exact(value: f64, method: &str) -> Self {
        Self { mean: value, stderr: 0.0, replicas: 1, seed: 0, method: method.to_string() }
    }

    /// `|mean - target| <= k * stderr`, with a tiny absolute floor so that
    /// zero-variance estimates of exact values still compare equal.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + 1e-12 * target.abs().max(1.0)
    }

    pub fn upper(&self, k: f64) -> f64 {
        self.mean + k * self.stderr
    }

    pub fn lower(&self, k: f64) -> f64 {
        self.mean - k * self.stderr
    }
}

/// Evaluates `f(replica)` for every replica index and returns the results in
/// index order. The output does not depend on the rayon pool size.
pub fn replicate<T, F>(replicas: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..replicas as u64).into_par_iter().map(f).collect()
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 1, "t");
        assert_eq!(e.mean, 2.5);
        let var = (2.25 + 0.25 + 0.25 + 2.25) / 3.0;
        assert!((e.stderr - (var / 4.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_replica_has_zero_stderr() {
        let e = Estimate::from_samples(&[3.0], 0, "t");
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.replicas, 1);
    }

    #[test]
    fn replicate_preserves_order() {
        let v = replicate(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i as u64));
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (s, b, r2) = linear_fit(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (b - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
