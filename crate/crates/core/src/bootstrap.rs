//! Nonparametric bootstrap machinery shared by the agreement and pooling
//! modules: seeded per-replicate random streams, resampling, and BCa
//! (bias-corrected and accelerated) percentile intervals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{norm_cdf, norm_quantile, quantile_sorted};

/// Smallest replication count accepted by the bootstrap procedures.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("at least {minimum} replicates are required, got {requested}")]
    TooFewReplicates { requested: usize, minimum: usize },
    #[error("all {0} bootstrap replicates failed")]
    AllReplicatesFailed(usize),
    #[error("bootstrap distribution is degenerate: {0}")]
    Degenerate(String),
}

/// How the BCa acceleration constant is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    /// Leave-one-out jackknife influence values.
    #[default]
    Jackknife,
    /// Empirical influence values from a linear regression of the replicate
    /// statistics on their resampling frequencies.
    Regression,
}

/// Random stream for replicate `replicate` under master seed `seed`.
///
/// Every replicate owns an independent ChaCha stream, so the values do not
/// depend on how replicates are scheduled across threads.
pub fn substream(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Draw `n` indices uniformly with replacement from `0..n`.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Raw replicate output: one statistic per replicate (`None` when the
/// statistic was undefined for that resample) and the resampling
/// frequency of every original observation.
#[derive(Debug, Clone)]
pub struct Replicates {
    pub values: Vec<Option<f64>>,
    pub frequencies: Vec<Vec<u32>>,
}

impl Replicates {
    pub fn n_failures(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn valid(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

/// Run `reps` resamples of `n` observations in parallel.
pub fn run_replicates<F>(n: usize, reps: usize, seed: u64, statistic: F) -> Replicates
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let out: Vec<(Option<f64>, Vec<u32>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let idx = resample_indices(&mut rng, n);
            let mut freq = vec![0u32; n];
            for &i in &idx {
                freq[i] += 1;
            }
            let value = statistic(&idx).filter(|v| v.is_finite());
            (value, freq)
        })
        .collect();
    let (values, frequencies) = out.into_iter().unzip();
    Replicates {
        values,
        frequencies,
    }
}

fn acceleration_from_influence(influence: &[f64]) -> f64 {
    let mean = influence.iter().sum::<f64>() / influence.len() as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for &l in influence {
        let d = l - mean;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 <= 0.0 {
        return 0.0;
    }
    s3 / (6.0 * s2.powf(1.5))
}

/// Acceleration from leave-one-out estimates `θ₍ᵢ₎`:
/// `a = Σ(θ̄ − θ₍ᵢ₎)³ / (6 [Σ(θ̄ − θ₍ᵢ₎)²]^{3/2})`.
pub fn jackknife_acceleration(leave_one_out: &[f64]) -> f64 {
    if leave_one_out.len() < 2 {
        return 0.0;
    }
    let mean = leave_one_out.iter().sum::<f64>() / leave_one_out.len() as f64;
    let influence: Vec<f64> = leave_one_out.iter().map(|t| mean - t).collect();
    acceleration_from_influence(&influence)
}

/// Acceleration from regression-estimated empirical influence values.
///
/// Fits `t* = β₀ + Σ_{i<n} βᵢ f*ᵢ / n` by least squares over the valid
/// replicates; the influence of observation `i` is `βᵢ` (zero for the
/// dropped last column) centred to mean zero.
pub fn regression_acceleration(replicates: &Replicates) -> f64 {
    let rows: Vec<(&Vec<u32>, f64)> = replicates
        .frequencies
        .iter()
        .zip(&replicates.values)
        .filter_map(|(f, v)| v.map(|v| (f, v)))
        .collect();
    let Some((first, _)) = rows.first() else {
        return 0.0;
    };
    let n = first.len();
    if n < 2 || rows.len() <= n {
        return 0.0;
    }
    // Normal equations over [1, f_1/n, ..., f_{n-1}/n].
    let p = n;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut x = vec![0.0; p];
    for (freq, t) in &rows {
        x[0] = 1.0;
        for j in 1..p {
            x[j] = freq[j - 1] as f64 / n as f64;
        }
        for a in 0..p {
            xty[a] += x[a] * t;
            for b in a..p {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => match xtx.svd(true, true).solve(&xty, 1e-12) {
            Ok(b) => b,
            Err(_) => return 0.0,
        },
    };
    let mut influence: Vec<f64> = (1..p).map(|j| beta[j]).collect();
    influence.push(0.0);
    acceleration_from_influence(&influence)
}

/// A BCa interval together with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcaInterval {
    pub low: f64,
    pub high: f64,
    pub z0: f64,
    pub acceleration: f64,
    pub alpha_low_adjusted: f64,
    pub alpha_high_adjusted: f64,
}

fn adjusted_alpha(alpha: f64, z0: f64, acceleration: f64) -> f64 {
    let z = norm_quantile(alpha);
    let denom = 1.0 - acceleration * (z0 + z);
    norm_cdf(z0 + (z0 + z) / denom)
}

/// BCa interval at confidence `level` around `point` from the valid
/// replicate values. `z0 = Φ⁻¹(#{t* < t̂} / R)`.
pub fn bca_interval(
    point: f64,
    replicates: &[f64],
    acceleration: f64,
    level: f64,
) -> Result<BcaInterval, BootstrapError> {
    if replicates.is_empty() {
        return Err(BootstrapError::AllReplicatesFailed(0));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let below = sorted.iter().filter(|&&t| t < point).count();
    if below == 0 || below == sorted.len() {
        return Err(BootstrapError::Degenerate(format!(
            "{below} of {} replicates fall below the point estimate",
            sorted.len()
        )));
    }
    let z0 = norm_quantile(below as f64 / sorted.len() as f64);
    let alpha = (1.0 - level) / 2.0;
    let a_lo = adjusted_alpha(alpha, z0, acceleration);
    let a_hi = adjusted_alpha(1.0 - alpha, z0, acceleration);
    Ok(BcaInterval {
        low: quantile_sorted(&sorted, a_lo),
        high: quantile_sorted(&sorted, a_hi),
        z0,
        acceleration,
        alpha_low_adjusted: a_lo,
        alpha_high_adjusted: a_hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<usize> = resample_indices(&mut substream(7, 3), 20);
        let b: Vec<usize> = resample_indices(&mut substream(7, 3), 20);
        let c: Vec<usize> = resample_indices(&mut substream(7, 4), 20);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parallel_replicates_match_serial_evaluation() {
        let data: Vec<f64> = (0..15).map(|i| (i as f64).sqrt()).collect();
        let mean = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let par = run_replicates(data.len(), 200, 99, mean);
        for (r, v) in par.values.iter().enumerate() {
            let idx = resample_indices(&mut substream(99, r as u64), data.len());
            assert_eq!(*v, mean(&idx));
        }
    }

    #[test]
    fn jackknife_acceleration_of_symmetric_values_is_zero() {
        assert_abs_diff_eq!(jackknife_acceleration(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(jackknife_acceleration(&[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn regression_influence_recovers_linear_statistic() {
        // For the sample mean the empirical influence is x_i − x̄ exactly,
        // so both estimators must agree.
        let data = [0.3, 1.9, 0.2, 4.5, 0.7, 0.1, 2.2];
        let mean = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let reps = run_replicates(data.len(), 2000, 5, mean);
        let loo: Vec<f64> = (0..data.len())
            .map(|i| {
                let rest: Vec<f64> = data.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
                rest.iter().sum::<f64>() / rest.len() as f64
            })
            .collect();
        assert_abs_diff_eq!(
            regression_acceleration(&reps),
            jackknife_acceleration(&loo),
            epsilon = 1e-9
        );
    }

    #[test]
    fn bca_without_bias_or_acceleration_is_percentile() {
        let reps: Vec<f64> = (0..1001).map(|i| i as f64 / 1000.0).collect();
        let ci = bca_interval(0.5, &reps, 0.0, 0.95).unwrap();
        assert_abs_diff_eq!(ci.z0, 0.0, epsilon = 0.01);
        assert_abs_diff_eq!(ci.low, 0.025, epsilon = 0.002);
        assert_abs_diff_eq!(ci.high, 0.975, epsilon = 0.002);
    }

    #[test]
    fn constant_distribution_is_degenerate() {
        let err = bca_interval(1.0, &[1.0; 200], 0.0, 0.95).unwrap_err();
        assert!(matches!(err, BootstrapError::Degenerate(_)));
    }
}
