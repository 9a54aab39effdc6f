//! Study-level nonparametric bootstrap of the pooled estimate.

use serde::{Deserialize, Serialize};

use super::{pool_arrays, validate, Estimator, MetaError};
use crate::bootstrap::{
    bca_interval, jackknife_acceleration, regression_acceleration, run_replicates, Acceleration,
    BootstrapError, MIN_REPLICATES,
};
use crate::effects::EffectEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub acceleration: Acceleration,
    pub level: f64,
}

impl BootstrapOptions {
    pub fn new(replications: usize, seed: u64) -> Self {
        BootstrapOptions {
            replications,
            seed,
            estimator: Estimator::Reml,
            acceleration: Acceleration::Regression,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replications: usize,
    pub seed: u64,
    pub n_failures: usize,
    pub estimator: Estimator,
    pub acceleration_method: Acceleration,
    pub level: f64,
    pub mu_hat: f64,
    pub bca_low: f64,
    pub bca_high: f64,
    pub rr_hat: f64,
    pub rr_low: f64,
    pub rr_high: f64,
    pub z0: f64,
    pub acceleration: f64,
}

/// Resample studies with replacement, refit the random-effects model on
/// each resample and form a BCa interval for the pooled log risk ratio.
///
/// A replicate fails when it draws fewer than two distinct studies or when
/// τ² estimation does not converge; failures are counted and dropped.
pub fn bootstrap_pool(
    estimates: &[EffectEstimate],
    options: BootstrapOptions,
) -> Result<BootstrapSummary, MetaError> {
    if options.replications < MIN_REPLICATES {
        return Err(BootstrapError::TooFewReplicates {
            requested: options.replications,
            minimum: MIN_REPLICATES,
        }
        .into());
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(MetaError::InvalidLevel);
    }
    let (y, v) = validate(estimates)?;
    let k = y.len();
    if k < 2 {
        return Err(MetaError::TooFewStudies {
            operation: "bootstrap",
            needed: 2,
            got: k,
        });
    }
    let point = pool_arrays(&y, &v, options.estimator)?.mu;

    let replicates = run_replicates(k, options.replications, options.seed, |idx| {
        let mut seen = vec![false; k];
        idx.iter().for_each(|&i| seen[i] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return None;
        }
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let vs: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        pool_arrays(&ys, &vs, options.estimator).ok().map(|r| r.mu)
    });
    let n_failures = replicates.n_failures();
    let valid = replicates.valid();
    if valid.is_empty() {
        return Err(BootstrapError::AllReplicatesFailed(options.replications).into());
    }

    let acceleration = match options.acceleration {
        Acceleration::Regression => regression_acceleration(&replicates),
        Acceleration::Jackknife => {
            let loo: Vec<f64> = (0..k)
                .map(|skip| {
                    let ys: Vec<f64> = (0..k).filter(|&i| i != skip).map(|i| y[i]).collect();
                    let vs: Vec<f64> = (0..k).filter(|&i| i != skip).map(|i| v[i]).collect();
                    pool_arrays(&ys, &vs, options.estimator).map(|r| r.mu)
                })
                .collect::<Result<_, _>>()?;
            jackknife_acceleration(&loo)
        }
    };
    let bca = bca_interval(point, &valid, acceleration, options.level)?;
    Ok(BootstrapSummary {
        replications: options.replications,
        seed: options.seed,
        n_failures,
        estimator: options.estimator,
        acceleration_method: options.acceleration,
        level: options.level,
        mu_hat: point,
        bca_low: bca.low,
        bca_high: bca.high,
        rr_hat: point.exp(),
        rr_low: bca.low.exp(),
        rr_high: bca.high.exp(),
        z0: bca.z0,
        acceleration: bca.acceleration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(pairs: &[(f64, f64)]) -> Vec<EffectEstimate> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(y, v))| EffectEstimate::new(format!("s{i}"), y, v))
            .collect()
    }

    #[test]
    fn too_few_replicates() {
        let e = est(&[(0.1, 0.1), (0.2, 0.1), (-0.3, 0.2)]);
        let err = bootstrap_pool(&e, BootstrapOptions::new(50, 1)).unwrap_err();
        assert!(matches!(err, MetaError::Bootstrap(BootstrapError::TooFewReplicates { .. })));
        assert!(matches!(
            bootstrap_pool(&e[..1], BootstrapOptions::new(200, 1)),
            Err(MetaError::TooFewStudies { .. })
        ));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let e = est(&[(0.1, 0.1), (0.5, 0.1), (-0.3, 0.2), (-0.8, 0.3), (0.0, 0.05)]);
        let a = bootstrap_pool(&e, BootstrapOptions::new(300, 42)).unwrap();
        let b = bootstrap_pool(&e, BootstrapOptions::new(300, 42)).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_pool(&e, BootstrapOptions::new(300, 43)).unwrap();
        assert_ne!(a.bca_low, c.bca_low);
        assert!(a.bca_low <= a.mu_hat && a.mu_hat <= a.bca_high);
        assert_eq!(a.rr_low, a.bca_low.exp());
    }
}
