//! Doi plot and LFK index for small-study asymmetry.
//!
//! Effects are ranked (ties share their average rank), converted to the
//! midpoint percentile `(rank − ½) / k`, mapped through the standard normal
//! quantile and folded to `|z|`. The apex is the point nearest the median
//! (smallest `|z|`). With effects rescaled to `x ∈ [0, 1]` by their range,
//!
//! ```text
//! LFK = 5 / (2k) · Σ |zᵢ| (xᵢ − x_apex)
//! ```
//!
//! where `x_apex` is the mean position of the points tied at the smallest
//! `|z|`. Points left of the apex pull the index negative, so a heavier
//! smaller-effect limb gives a negative index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::EffectEstimate;
use crate::stats::norm_quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("a Doi plot needs at least 3 studies, got {0}")]
    TooFewStudies(usize),
    #[error("study '{0}' has a non-finite effect")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoiPoint {
    pub study_id: String,
    pub effect: f64,
    pub percentile: f64,
    pub abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoiPlot {
    /// Sorted by effect; ties keep input order.
    pub points: Vec<DoiPoint>,
    pub apex_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfkClass {
    NoAsymmetry,
    Minor,
    Major,
}

impl LfkClass {
    pub fn from_index(index: f64) -> Self {
        let a = index.abs();
        if a <= 1.0 {
            LfkClass::NoAsymmetry
        } else if a <= 2.0 {
            LfkClass::Minor
        } else {
            LfkClass::Major
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfkResult {
    pub index: f64,
    pub classification: LfkClass,
    /// The apex is an extreme point, so one limb has no area.
    pub empty_limb: bool,
}

pub fn doi_plot(estimates: &[EffectEstimate]) -> Result<DoiPlot, BiasError> {
    let k = estimates.len();
    if k < 3 {
        return Err(BiasError::TooFewStudies(k));
    }
    if let Some(e) = estimates.iter().find(|e| !e.yi.is_finite()) {
        return Err(BiasError::NonFinite(e.study_id.clone()));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| estimates[a].yi.total_cmp(&estimates[b].yi));
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && estimates[order[j + 1]].yi == estimates[order[i]].yi {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = avg);
        i = j + 1;
    }
    let points: Vec<DoiPoint> = order
        .iter()
        .zip(&ranks)
        .map(|(&idx, &rank)| {
            // Fold through the distance from the middle rank so that ranks
            // mirrored about the median get bit-identical |z|.
            let from_middle = (rank - (k as f64 + 1.0) / 2.0).abs();
            DoiPoint {
                study_id: estimates[idx].study_id.clone(),
                effect: estimates[idx].yi,
                percentile: (rank - 0.5) / k as f64,
                abs_z: norm_quantile(0.5 + from_middle / k as f64),
            }
        })
        .collect();
    let apex_index = points
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.abs_z < points[best].abs_z { i } else { best });
    Ok(DoiPlot { points, apex_index })
}

pub fn lfk_index(plot: &DoiPlot) -> LfkResult {
    let k = plot.points.len();
    let empty_limb = plot.apex_index == 0 || plot.apex_index + 1 == k;
    let lo = plot.points.first().map_or(0.0, |p| p.effect);
    let hi = plot.points.last().map_or(0.0, |p| p.effect);
    let range = hi - lo;
    if k == 0 || range <= 0.0 {
        return LfkResult {
            index: 0.0,
            classification: LfkClass::NoAsymmetry,
            empty_limb,
        };
    }
    let x = |e: f64| (e - lo) / range;
    let min_z = plot.points[plot.apex_index].abs_z;
    let tied: Vec<f64> = plot
        .points
        .iter()
        .filter(|p| p.abs_z == min_z)
        .map(|p| x(p.effect))
        .collect();
    let x_apex = tied.iter().sum::<f64>() / tied.len() as f64;
    let index = 5.0 / (2.0 * k as f64)
        * plot
            .points
            .iter()
            .map(|p| p.abs_z * (x(p.effect) - x_apex))
            .sum::<f64>();
    LfkResult {
        index,
        classification: LfkClass::from_index(index),
        empty_limb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn est(ys: &[f64]) -> Vec<EffectEstimate> {
        ys.iter()
            .enumerate()
            .map(|(i, &y)| EffectEstimate::new(format!("s{i}"), y, 0.1))
            .collect()
    }

    #[test]
    fn needs_three_studies() {
        assert_eq!(doi_plot(&est(&[0.1, 0.2])), Err(BiasError::TooFewStudies(2)));
    }

    #[test]
    fn equal_effects_tie_to_lowest_index() {
        let plot = doi_plot(&est(&[0.3, 0.3, 0.3])).unwrap();
        assert!(plot.points.iter().all(|p| p.abs_z == 0.0 && p.percentile == 0.5));
        assert_eq!(plot.apex_index, 0);
        assert_eq!(plot.points[0].study_id, "s0");
        let lfk = lfk_index(&plot);
        assert_eq!(lfk.index, 0.0);
        assert!(lfk.empty_limb);
    }

    #[test]
    fn symmetric_set_has_zero_index() {
        let lfk = lfk_index(&doi_plot(&est(&[-0.6, -0.2, 0.0, 0.2, 0.6])).unwrap());
        assert_abs_diff_eq!(lfk.index, 0.0, epsilon = 1e-12);
        assert!(!lfk.empty_limb);
    }

    /// Direct evaluation of the index for three points with no ties:
    /// percentiles 1/6, 1/2, 5/6; |z| = q, 0, q with q = Φ⁻¹(5/6).
    #[test]
    fn three_point_hand_value() {
        let q = norm_quantile(5.0 / 6.0);
        // x = 0, 0.25, 1 → 5/6 · (q·(0 − 0.25) + q·(1 − 0.25)) = 5/6 · q/2
        let lfk = lfk_index(&doi_plot(&est(&[0.0, 1.0, 4.0])).unwrap());
        assert_abs_diff_eq!(lfk.index, 5.0 / 6.0 * q / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn classification_bands() {
        assert_eq!(LfkClass::from_index(1.0), LfkClass::NoAsymmetry);
        assert_eq!(LfkClass::from_index(-1.0), LfkClass::NoAsymmetry);
        assert_eq!(LfkClass::from_index(1.0000001), LfkClass::Minor);
        assert_eq!(LfkClass::from_index(-2.0), LfkClass::Minor);
        assert_eq!(LfkClass::from_index(2.5), LfkClass::Major);
    }

    /// Area difference between the limbs computed point by point on the
    /// mirrored data, independent of the closed form above.
    fn brute_force(ys: &[f64]) -> f64 {
        let plot = doi_plot(&est(ys)).unwrap();
        let lo = plot.points[0].effect;
        let range = plot.points.last().unwrap().effect - lo;
        if range <= 0.0 {
            return 0.0;
        }
        let min_z = plot.points[plot.apex_index].abs_z;
        let apex: Vec<f64> = plot.points.iter().filter(|p| p.abs_z == min_z).map(|p| (p.effect - lo) / range).collect();
        let centre = apex.iter().sum::<f64>() / apex.len() as f64;
        let (mut left, mut right) = (0.0, 0.0);
        for p in &plot.points {
            let d = (p.effect - lo) / range - centre;
            if d < 0.0 {
                left += p.abs_z * -d;
            } else {
                right += p.abs_z * d;
            }
        }
        5.0 / (2.0 * ys.len() as f64) * (right - left)
    }

    proptest! {
        #[test]
        fn mirroring_negates(ys in proptest::collection::vec(-3.0f64..3.0, 3..12)) {
            let mirrored: Vec<f64> = ys.iter().map(|y| -y).collect();
            let a = lfk_index(&doi_plot(&est(&ys)).unwrap()).index;
            let b = lfk_index(&doi_plot(&est(&mirrored)).unwrap()).index;
            prop_assert!((a + b).abs() < 1e-9);
            prop_assert!((b - brute_force(&mirrored)).abs() < 1e-9);
            let apex_a = doi_plot(&est(&ys)).unwrap();
            let apex_b = doi_plot(&est(&mirrored)).unwrap();
            prop_assert_eq!(apex_a.points[apex_a.apex_index].abs_z, apex_b.points[apex_b.apex_index].abs_z);
        }

        #[test]
        fn translation_invariant(ys in proptest::collection::vec(-3.0f64..3.0, 3..12), shift in -5.0f64..5.0) {
            let moved: Vec<f64> = ys.iter().map(|y| y + shift).collect();
            let a = lfk_index(&doi_plot(&est(&ys)).unwrap()).index;
            let b = lfk_index(&doi_plot(&est(&moved)).unwrap()).index;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn folded_z_non_negative_and_apex_minimal(ys in proptest::collection::vec(-3.0f64..3.0, 3..12)) {
            let plot = doi_plot(&est(&ys)).unwrap();
            let apex = plot.points[plot.apex_index].abs_z;
            prop_assert!(plot.points.iter().all(|p| p.abs_z >= 0.0 && p.abs_z >= apex));
            prop_assert!(plot.points.windows(2).all(|w| w[0].effect <= w[1].effect));
        }
    }
}
