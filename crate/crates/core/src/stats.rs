//! Distribution helpers shared by the inference routines.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

const PROB_EPS: f64 = 1e-15;

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

/// Standard normal quantile. `p` is clamped away from 0 and 1.
pub fn norm_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// Two-sided p-value for a standard normal test statistic.
pub fn two_sided_p(z: f64) -> f64 {
    2.0 * standard_normal().sf(z.abs())
}

/// Quantile of the χ² distribution with `df` degrees of freedom.
pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    ChiSquared::new(df)
        .expect("degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// Upper-tail probability of the χ² distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df)
        .expect("degrees of freedom must be positive")
        .sf(x)
}

/// Linear-interpolation quantile (R type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let t = pos - lo as f64;
            (1.0 - t) * sorted[lo] + t * sorted[hi]
        }
    }
}

/// Mean, skewness `m3 / m2^1.5` and excess kurtosis `m4 / m2² − 3`
/// using population central moments.
pub fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return (mean, f64::NAN, f64::NAN);
    }
    (mean, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantiles() {
        assert_abs_diff_eq!(norm_quantile(0.975), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(two_sided_p(1.959964), 0.05, epsilon = 1e-6);
    }

    #[test]
    fn chi2_quantiles() {
        assert_abs_diff_eq!(chi2_quantile(0.95, 1.0), 3.841459, epsilon = 1e-5);
        assert_abs_diff_eq!(chi2_quantile(0.025, 6.0), 1.237344, epsilon = 1e-5);
        assert_abs_diff_eq!(chi2_quantile(0.975, 4.0), 11.143287, epsilon = 1e-5);
    }

    #[test]
    fn type7_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.5), 2.5);
    }

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let (mean, skew, _) = moments(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_abs_diff_eq!(mean, 0.0);
        assert_abs_diff_eq!(skew, 0.0);
    }
}
