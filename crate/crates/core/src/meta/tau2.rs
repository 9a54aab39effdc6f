//! Confidence intervals for the between-study variance.

use serde::{Deserialize, Serialize};

use super::{require, tau2_reml, validate, weighted_mean, MetaError};
use crate::effects::EffectEstimate;
use crate::stats::chi2_quantile;

/// Upper end of the τ² search interval unless overridden.
pub const DEFAULT_SEARCH_BOUND: f64 = 100.0;
/// Grid resolution for the profile likelihood.
pub const DEFAULT_PROFILE_STEPS: usize = 50;
const BISECTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau2Method {
    QProfile,
    ProfileLikelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tau2Interval {
    pub method: Tau2Method,
    pub level: f64,
    pub low: f64,
    pub high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_steps: Option<usize>,
    pub search_bound: f64,
    /// Set when a bound could not be bracketed and was truncated at
    /// `search_bound`.
    pub truncated: bool,
}

/// Generalized Q: `Σ (yᵢ − μ̂(τ²))² / (vᵢ + τ²)`.
pub fn generalized_q(y: &[f64], v: &[f64], tau2: f64) -> f64 {
    let (mu, _) = weighted_mean(y, v, tau2);
    y.iter()
        .zip(v)
        .map(|(yi, vi)| (yi - mu).powi(2) / (vi + tau2))
        .sum()
}

/// Restricted log-likelihood of the normal-normal model with the mean
/// profiled out, up to an additive constant:
/// `−½ [Σ ln(vᵢ + τ²) + ln Σwᵢ + Σ wᵢ (yᵢ − μ̂)²]`.
pub fn restricted_log_likelihood(y: &[f64], v: &[f64], tau2: f64) -> f64 {
    let (mu, sw) = weighted_mean(y, v, tau2);
    let mut acc = sw.ln();
    for (yi, vi) in y.iter().zip(v) {
        let s = vi + tau2;
        acc += s.ln() + (yi - mu).powi(2) / s;
    }
    -0.5 * acc
}

/// Root of a decreasing function on `[lo, hi]` where `f(lo) > 0 ≥ f(hi)`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn tau2_ci_qprofile(estimates: &[EffectEstimate], level: f64) -> Result<Tau2Interval, MetaError> {
    tau2_ci_qprofile_bounded(estimates, level, DEFAULT_SEARCH_BOUND)
}

/// Q-profile interval: τ² values where the generalized Q crosses the
/// χ²ₖ₋₁ quantiles, searched by bisection on `[0, bound]`.
pub fn tau2_ci_qprofile_bounded(
    estimates: &[EffectEstimate],
    level: f64,
    bound: f64,
) -> Result<Tau2Interval, MetaError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetaError::InvalidLevel);
    }
    let (y, v) = validate(estimates)?;
    require("Q-profile interval", 2, y.len())?;
    let df = (y.len() - 1) as f64;
    let alpha = 1.0 - level;
    let q_upper_quantile = chi2_quantile(1.0 - alpha / 2.0, df);
    let q_lower_quantile = chi2_quantile(alpha / 2.0, df);
    let q = |t: f64| generalized_q(&y, &v, t);
    let mut truncated = false;
    let mut solve = |target: f64| -> f64 {
        let f = |t: f64| q(t) - target;
        if f(0.0) <= 0.0 {
            0.0
        } else if f(bound) > 0.0 {
            truncated = true;
            bound
        } else {
            bisect(0.0, bound, f)
        }
    };
    let low = solve(q_upper_quantile);
    let high = solve(q_lower_quantile);
    Ok(Tau2Interval {
        method: Tau2Method::QProfile,
        level,
        low,
        high,
        grid_steps: None,
        search_bound: bound,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau2: f64,
    pub log_likelihood: f64,
}

/// Profile-likelihood interval together with the likelihood curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileLikelihood {
    pub interval: Tau2Interval,
    pub peak_tau2: f64,
    pub max_log_likelihood: f64,
    /// Likelihood-ratio cutoff (χ²₁ quantile at the interval level).
    pub critical_value: f64,
    pub curve: Vec<CurvePoint>,
}

/// Likelihood-ratio interval for τ² from the restricted likelihood,
/// evaluated on a grid of `steps` intervals over `[0, Q-profile upper]` and
/// refined by bisection at each crossing.
pub fn tau2_ci_profile_likelihood(
    estimates: &[EffectEstimate],
    steps: usize,
    level: f64,
) -> Result<ProfileLikelihood, MetaError> {
    let (y, v) = validate(estimates)?;
    require("profile likelihood", 2, y.len())?;
    let steps = steps.max(1);
    let qp = tau2_ci_qprofile(estimates, level)?;
    let ll = |t: f64| restricted_log_likelihood(&y, &v, t);
    let peak = tau2_reml(&y, &v).ok_or(MetaError::NoConvergence)?;
    let max_ll = ll(peak);
    if !max_ll.is_finite() {
        return Err(MetaError::NoConvergence);
    }
    let critical = chi2_quantile(level, 1.0);
    // positive inside the interval, negative outside
    let inside = |t: f64| critical - 2.0 * (max_ll - ll(t));

    let mut grid_max = if qp.high > 0.0 { qp.high } else { peak.max(1.0) };
    let mut truncated = false;
    loop {
        if inside(grid_max) <= 0.0 {
            break;
        }
        if grid_max >= DEFAULT_SEARCH_BOUND {
            truncated = true;
            grid_max = DEFAULT_SEARCH_BOUND;
            break;
        }
        grid_max = (grid_max * 2.0).min(DEFAULT_SEARCH_BOUND);
    }
    let curve: Vec<CurvePoint> = (0..=steps)
        .map(|i| {
            let tau2 = grid_max * i as f64 / steps as f64;
            CurvePoint {
                tau2,
                log_likelihood: ll(tau2),
            }
        })
        .collect();

    let low = if peak > 0.0 && inside(0.0) <= 0.0 {
        let last_out = curve
            .iter()
            .take_while(|p| p.tau2 < peak)
            .filter(|p| inside(p.tau2) <= 0.0)
            .last()
            .map_or(0.0, |p| p.tau2);
        bisect(last_out, peak, |t| -inside(t))
    } else {
        0.0
    };
    let high = if truncated {
        grid_max
    } else {
        let first_out = curve
            .iter()
            .find(|p| p.tau2 > peak && inside(p.tau2) <= 0.0)
            .map_or(grid_max, |p| p.tau2);
        let prev_in = curve
            .iter()
            .rfind(|p| p.tau2 < first_out && p.tau2 >= peak)
            .map_or(peak, |p| p.tau2.max(peak));
        bisect(prev_in, first_out, inside)
    };
    Ok(ProfileLikelihood {
        interval: Tau2Interval {
            method: Tau2Method::ProfileLikelihood,
            level,
            low,
            high,
            grid_steps: Some(steps),
            search_bound: grid_max,
            truncated,
        },
        peak_tau2: peak,
        max_log_likelihood: max_ll,
        critical_value: critical,
        curve,
    })
}
