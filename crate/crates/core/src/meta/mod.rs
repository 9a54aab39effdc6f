//! Random-effects pooling of log risk ratios.
//!
//! Studies are weighted by `1 / (vᵢ + τ²)`. The between-study variance is
//! estimated by restricted maximum likelihood (default) or the
//! DerSimonian–Laird moment estimator. Cochran's Q always uses the
//! fixed-effect weights `1 / vᵢ`. I² is the share of total variance taken by
//! τ², `τ² / (τ² + s²)` with `s² = (k − 1) Σw / ((Σw)² − Σw²)` the typical
//! within-study variance; under the moment estimator this reduces to the
//! familiar `(Q − df) / Q`.

mod resample;
mod tau2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::BootstrapError;
use crate::effects::EffectEstimate;
use crate::stats::{chi2_sf, norm_quantile, two_sided_p};

pub use resample::{bootstrap_pool, BootstrapOptions, BootstrapSummary};
pub use tau2::{
    generalized_q, restricted_log_likelihood, tau2_ci_profile_likelihood, tau2_ci_qprofile,
    tau2_ci_qprofile_bounded, CurvePoint, ProfileLikelihood, Tau2Interval, Tau2Method,
    DEFAULT_PROFILE_STEPS, DEFAULT_SEARCH_BOUND,
};

/// Iteration cap for Fisher scoring.
pub const MAX_ITERATIONS: usize = 100;
/// Convergence threshold on successive τ² iterates.
pub const TAU2_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("no studies to pool")]
    Empty,
    #[error("study '{0}' has a non-positive or non-finite variance")]
    InvalidVariance(String),
    #[error("study '{0}' has a non-finite effect")]
    InvalidEffect(String),
    #[error("{operation} needs at least {needed} studies, got {got}")]
    TooFewStudies {
        operation: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("between-study variance estimation did not converge")]
    NoConvergence,
    #[error("confidence level must lie strictly between 0 and 1")]
    InvalidLevel,
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Reml,
    Dl,
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reml" => Ok(Estimator::Reml),
            "dl" => Ok(Estimator::Dl),
            other => Err(format!("unknown estimator '{other}' (expected reml or dl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub k: usize,
    pub mu: f64,
    pub se_mu: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rr: f64,
    pub rr_low: f64,
    pub rr_high: f64,
    pub z: f64,
    pub p: f64,
    pub tau2: f64,
    pub q: f64,
    pub df: usize,
    pub i_squared: f64,
    pub estimator: Estimator,
    /// Set when only one study was supplied and the result is that study.
    pub single_study: bool,
}

impl PooledResult {
    /// Percentage weight of each study under the fitted τ².
    pub fn weights_percent(&self, estimates: &[EffectEstimate]) -> Vec<f64> {
        let w: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.vi + self.tau2)).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|x| 100.0 * x / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub q: f64,
    pub df: usize,
    pub p_value: f64,
    pub i_squared: f64,
    pub h_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub omitted_study_id: String,
    pub result: PooledResult,
}

pub(crate) fn validate(estimates: &[EffectEstimate]) -> Result<(Vec<f64>, Vec<f64>), MetaError> {
    if estimates.is_empty() {
        return Err(MetaError::Empty);
    }
    let mut y = Vec::with_capacity(estimates.len());
    let mut v = Vec::with_capacity(estimates.len());
    for e in estimates {
        if !e.yi.is_finite() {
            return Err(MetaError::InvalidEffect(e.study_id.clone()));
        }
        if !(e.vi.is_finite() && e.vi > 0.0) {
            return Err(MetaError::InvalidVariance(e.study_id.clone()));
        }
        y.push(e.yi);
        v.push(e.vi);
    }
    Ok((y, v))
}

fn require(operation: &'static str, needed: usize, got: usize) -> Result<(), MetaError> {
    if got < needed {
        return Err(MetaError::TooFewStudies {
            operation,
            needed,
            got,
        });
    }
    Ok(())
}

/// Weighted mean and total weight under between-study variance `tau2`.
pub(crate) fn weighted_mean(y: &[f64], v: &[f64], tau2: f64) -> (f64, f64) {
    let (mut sw, mut swy) = (0.0, 0.0);
    for (yi, vi) in y.iter().zip(v) {
        let w = 1.0 / (vi + tau2);
        sw += w;
        swy += w * yi;
    }
    (swy / sw, sw)
}

fn cochran_q(y: &[f64], v: &[f64]) -> f64 {
    let (mu, _) = weighted_mean(y, v, 0.0);
    y.iter().zip(v).map(|(yi, vi)| (yi - mu).powi(2) / vi).sum()
}

/// Typical within-study variance `(k − 1) Σw / ((Σw)² − Σw²)`.
fn typical_variance(v: &[f64]) -> f64 {
    let sw: f64 = v.iter().map(|vi| 1.0 / vi).sum();
    let sw2: f64 = v.iter().map(|vi| 1.0 / (vi * vi)).sum();
    (v.len() as f64 - 1.0) * sw / (sw * sw - sw2)
}

fn i_squared_from_tau2(v: &[f64], tau2: f64) -> f64 {
    if tau2 <= 0.0 {
        return 0.0;
    }
    100.0 * tau2 / (tau2 + typical_variance(v))
}

pub(crate) fn tau2_dl(y: &[f64], v: &[f64]) -> f64 {
    let df = y.len() as f64 - 1.0;
    let sw: f64 = v.iter().map(|vi| 1.0 / vi).sum();
    let sw2: f64 = v.iter().map(|vi| 1.0 / (vi * vi)).sum();
    let c = sw - sw2 / sw;
    if c <= 0.0 {
        return 0.0;
    }
    ((cochran_q(y, v) - df) / c).max(0.0)
}

/// Newton iterations on the restricted likelihood, falling back to the
/// expected information where the observed curvature is not positive, with
/// step halving.
fn reml_scoring(y: &[f64], v: &[f64]) -> Option<f64> {
    let mut t = tau2_dl(y, v);
    let mut ll = restricted_log_likelihood(y, v, t);
    for _ in 0..MAX_ITERATIONS {
        let (mu, sw) = weighted_mean(y, v, t);
        let (mut sw2, mut sw3, mut swr2, mut swr3, mut sw2r) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (yi, vi) in y.iter().zip(v) {
            let w = 1.0 / (vi + t);
            let r = w * (yi - mu);
            sw2 += w * w;
            sw3 += w * w * w;
            swr2 += r * r;
            swr3 += w * r * r;
            sw2r += w * r;
        }
        let trace_p = sw - sw2 / sw;
        let gradient = 0.5 * (swr2 - trace_p);
        let expected = 0.5 * (sw2 - 2.0 * sw3 / sw + (sw2 / sw).powi(2));
        if !(expected.is_finite() && expected > 0.0 && gradient.is_finite()) {
            return None;
        }
        // Expected information alone can overshoot and oscillate near the
        // maximum, so take a Newton step whenever the curvature allows it.
        let observed = swr3 - sw2r * sw2r / sw - expected;
        let information = if observed.is_finite() && observed > 0.0 { observed } else { expected };
        let mut step = gradient / information;
        let mut next = (t + step).max(0.0);
        let mut next_ll = restricted_log_likelihood(y, v, next);
        let mut halvings = 0;
        while next_ll < ll - 1e-12 && halvings < 30 {
            step /= 2.0;
            next = (t + step).max(0.0);
            next_ll = restricted_log_likelihood(y, v, next);
            halvings += 1;
        }
        if !next_ll.is_finite() {
            return None;
        }
        let delta = (next - t).abs();
        t = next;
        ll = next_ll;
        if delta < TAU2_TOLERANCE {
            return Some(t);
        }
    }
    None
}

/// Golden-section maximization of the restricted likelihood over a
/// bracket that is widened until the likelihood turns down.
fn reml_bracketed(y: &[f64], v: &[f64]) -> Option<f64> {
    let f = |t: f64| restricted_log_likelihood(y, v, t);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|yi| (yi - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let mut hi = (10.0 * spread).max(1.0);
    for _ in 0..60 {
        if f(2.0 * hi) < f(hi) {
            break;
        }
        hi *= 2.0;
    }
    let hi = 2.0 * hi;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < TAU2_TOLERANCE {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut best = (a + b) / 2.0;
    if f(0.0) >= f(best) {
        best = 0.0;
    }
    f(best).is_finite().then_some(best)
}

pub(crate) fn tau2_reml(y: &[f64], v: &[f64]) -> Option<f64> {
    reml_scoring(y, v).or_else(|| reml_bracketed(y, v))
}

pub(crate) fn estimate_tau2(y: &[f64], v: &[f64], estimator: Estimator) -> Result<f64, MetaError> {
    if y.len() < 2 {
        return Ok(0.0);
    }
    match estimator {
        Estimator::Dl => Ok(tau2_dl(y, v)),
        Estimator::Reml => tau2_reml(y, v).ok_or(MetaError::NoConvergence),
    }
}

const Z_975: f64 = 1.959_963_984_540_054;

pub(crate) fn pool_arrays(y: &[f64], v: &[f64], estimator: Estimator) -> Result<PooledResult, MetaError> {
    let k = y.len();
    let tau2 = estimate_tau2(y, v, estimator)?;
    let (mu, sw) = weighted_mean(y, v, tau2);
    let se_mu = sw.sqrt().recip();
    let (q, i_squared) = if k >= 2 {
        (cochran_q(y, v), i_squared_from_tau2(v, tau2))
    } else {
        (0.0, 0.0)
    };
    let z = mu / se_mu;
    let (ci_low, ci_high) = (mu - Z_975 * se_mu, mu + Z_975 * se_mu);
    Ok(PooledResult {
        k,
        mu,
        se_mu,
        ci_low,
        ci_high,
        rr: mu.exp(),
        rr_low: ci_low.exp(),
        rr_high: ci_high.exp(),
        z,
        p: two_sided_p(z),
        tau2,
        q,
        df: k.saturating_sub(1),
        i_squared,
        estimator,
        single_study: k == 1,
    })
}

/// Random-effects pooled estimate with a 95% Wald interval.
pub fn pool_random_effects(
    estimates: &[EffectEstimate],
    estimator: Estimator,
) -> Result<PooledResult, MetaError> {
    let (y, v) = validate(estimates)?;
    pool_arrays(&y, &v, estimator)
}

/// Pooled estimate at an arbitrary confidence level.
pub fn pooled_interval(result: &PooledResult, level: f64) -> Result<(f64, f64), MetaError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetaError::InvalidLevel);
    }
    let z = norm_quantile(0.5 + level / 2.0);
    Ok((result.mu - z * result.se_mu, result.mu + z * result.se_mu))
}

/// Q, its χ² p-value, I² under the chosen τ² estimator, and `H² = Q / df`.
pub fn heterogeneity_stats(
    estimates: &[EffectEstimate],
    estimator: Estimator,
) -> Result<Heterogeneity, MetaError> {
    let (y, v) = validate(estimates)?;
    require("heterogeneity", 2, y.len())?;
    let q = cochran_q(&y, &v);
    let df = y.len() - 1;
    let dff = df as f64;
    let tau2 = estimate_tau2(&y, &v, estimator)?;
    Ok(Heterogeneity {
        q,
        df,
        p_value: chi2_sf(q, dff),
        i_squared: i_squared_from_tau2(&v, tau2),
        h_squared: q / dff,
    })
}

/// Refit with each study omitted in turn.
pub fn leave_one_out(
    estimates: &[EffectEstimate],
    estimator: Estimator,
) -> Result<Vec<LooEntry>, MetaError> {
    let (y, v) = validate(estimates)?;
    require("leave-one-out", 3, y.len())?;
    (0..y.len())
        .into_par_iter()
        .map(|skip| {
            let ys: Vec<f64> = y.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, x)| *x).collect();
            let vs: Vec<f64> = v.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, x)| *x).collect();
            Ok(LooEntry {
                omitted_study_id: estimates[skip].study_id.clone(),
                result: pool_arrays(&ys, &vs, estimator)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn est(pairs: &[(f64, f64)]) -> Vec<EffectEstimate> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(y, v))| EffectEstimate::new(format!("s{i}"), y, v))
            .collect()
    }

    #[test]
    fn single_study_returns_itself() {
        let r = pool_random_effects(&est(&[(-0.3, 0.04)]), Estimator::Reml).unwrap();
        assert!(r.single_study);
        assert_eq!(r.mu, -0.3);
        assert_abs_diff_eq!(r.se_mu, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.ci_high, -0.3 + Z_975 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(pool_random_effects(&[], Estimator::Reml), Err(MetaError::Empty));
        assert!(matches!(
            pool_random_effects(&est(&[(0.1, 0.0), (0.2, 0.1)]), Estimator::Dl),
            Err(MetaError::InvalidVariance(_))
        ));
        assert!(matches!(
            leave_one_out(&est(&[(0.1, 0.1), (0.2, 0.1)]), Estimator::Dl),
            Err(MetaError::TooFewStudies { needed: 3, .. })
        ));
    }

    #[test]
    fn identical_effects_have_zero_q() {
        let h = heterogeneity_stats(&est(&[(0.2, 0.1), (0.2, 0.3), (0.2, 0.05)]), Estimator::Reml).unwrap();
        assert_abs_diff_eq!(h.q, 0.0, epsilon = 1e-20);
        assert_eq!(h.i_squared, 0.0);
    }

    #[test]
    fn moment_estimator_i_squared_is_q_based() {
        let e = est(&[(-1.0, 0.02), (0.5, 0.03), (0.1, 0.05), (1.2, 0.04), (-0.4, 0.02)]);
        let h = heterogeneity_stats(&e, Estimator::Dl).unwrap();
        let df = h.df as f64;
        assert_abs_diff_eq!(h.i_squared, 100.0 * (h.q - df) / h.q, epsilon = 1e-9);
        assert_abs_diff_eq!(h.h_squared, h.q / df, epsilon = 1e-12);
    }

    #[test]
    fn heterogeneous_studies_reml_matches_grid_maximum() {
        let e = est(&[(-1.0, 0.02), (0.5, 0.03), (0.1, 0.05), (1.2, 0.04), (-0.4, 0.02)]);
        let (y, v) = validate(&e).unwrap();
        let t = tau2_reml(&y, &v).unwrap();
        assert!(t > 0.1);
        let best = (0..20000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|a, b| {
                restricted_log_likelihood(&y, &v, *a).total_cmp(&restricted_log_likelihood(&y, &v, *b))
            })
            .unwrap();
        assert_abs_diff_eq!(t, best, epsilon = 2e-4);
        let fallback = reml_bracketed(&y, &v).unwrap();
        assert_abs_diff_eq!(t, fallback, epsilon = 1e-6);
    }

    #[test]
    fn scoring_converges_where_expected_information_oscillates() {
        let pairs = [
            (-1.4321421060787418, 1.1109412897510973),
            (-2.4975058301819266, 1.3184108006993833),
            (-1.0473838174523733, 1.8980741509809083),
            (0.0, 0.01),
            (-0.8597759315141303, 1.9151838616601362),
            (-1.2486591570325771, 1.7694725413257997),
        ];
        let (y, v): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let t = reml_scoring(&y, &v).expect("scoring converges");
        assert_abs_diff_eq!(t, reml_bracketed(&y, &v).unwrap(), epsilon = 1e-6);
        let mut rotated = pairs;
        rotated.rotate_left(1);
        let a = pool_random_effects(&est(&pairs), Estimator::Reml).unwrap();
        let b = pool_random_effects(&est(&rotated), Estimator::Reml).unwrap();
        assert_abs_diff_eq!(a.mu, b.mu, epsilon = 1e-12);
    }

    #[test]
    fn dl_by_hand() {
        // y = (0, 1), v = (1, 1): Q = 0.5, C = 2 − 1 = 1, τ² = max(0, −0.5) = 0
        let e = est(&[(0.0, 1.0), (1.0, 1.0)]);
        let (y, v) = validate(&e).unwrap();
        assert_eq!(tau2_dl(&y, &v), 0.0);
        // y = (0, 4), v = (1, 1): Q = 8, C = 1, τ² = 7
        assert_abs_diff_eq!(tau2_dl(&[0.0, 4.0], &[1.0, 1.0]), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn leave_one_out_matches_subset_fit() {
        let e = est(&[(-0.5, 0.1), (0.2, 0.2), (-0.1, 0.15)]);
        let loo = leave_one_out(&e, Estimator::Reml).unwrap();
        assert_eq!(loo.len(), 3);
        let pair = pool_random_effects(&e[1..], Estimator::Reml).unwrap();
        assert_eq!(loo[0].result, pair);
        assert_eq!(loo[0].omitted_study_id, "s0");
        assert!(loo.iter().all(|l| l.result.k == 2));
    }

    proptest! {
        #[test]
        fn pooled_mean_is_a_convex_combination(
            pairs in proptest::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 2..9),
            reml in any::<bool>(),
        ) {
            let e = est(&pairs);
            let r = pool_random_effects(&e, if reml { Estimator::Reml } else { Estimator::Dl }).unwrap();
            let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.mu >= lo - 1e-12 && r.mu <= hi + 1e-12);
            prop_assert!(r.tau2 >= 0.0);
            prop_assert!(r.i_squared >= 0.0 && r.i_squared < 100.0);
            prop_assert!(r.rr_low < r.rr && r.rr < r.rr_high);
            prop_assert!((r.rr - r.mu.exp()).abs() < 1e-15);
        }

        #[test]
        fn reordering_leaves_mu_unchanged(
            pairs in proptest::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 2..8),
            rot in 0usize..8,
        ) {
            let mut shuffled = pairs.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            let a = pool_random_effects(&est(&pairs), Estimator::Reml).unwrap();
            let b = pool_random_effects(&est(&shuffled), Estimator::Reml).unwrap();
            prop_assert!((a.mu - b.mu).abs() < 1e-9);
        }

        #[test]
        fn zero_tau2_equals_fixed_effect(pairs in proptest::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 2..8)) {
            let (y, v): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = pool_random_effects(&est(&pairs), Estimator::Dl).unwrap();
            if r.tau2 == 0.0 {
                let (fe, sw) = weighted_mean(&y, &v, 0.0);
                prop_assert_eq!(r.mu, fe);
                prop_assert_eq!(r.se_mu, sw.sqrt().recip());
            }
        }

        #[test]
        fn adding_a_study_at_the_mean_never_widens(pairs in proptest::collection::vec((-0.3f64..0.3, 0.5f64..2.0), 2..8), v_new in 0.01f64..2.0) {
            let base = pool_random_effects(&est(&pairs), Estimator::Dl).unwrap();
            prop_assume!(base.tau2 == 0.0);
            let mut more = pairs.clone();
            more.push((base.mu, v_new));
            let grown = pool_random_effects(&est(&more), Estimator::Dl).unwrap();
            prop_assert!(grown.ci_high - grown.ci_low <= base.ci_high - base.ci_low + 1e-9);
        }
    }
}
