//! Inter-rater agreement on a three-point ordinal scale.
//!
//! Two reviewers grade each record −1 (reject), 0 (unclear) or 1 (include).
//! Agreement is summarised by kappa with linear (absolute-distance) weights
//! `w(i, j) = 1 − |i − j| / 2`, and its uncertainty by a BCa bootstrap over
//! records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{
    bca_interval, jackknife_acceleration, run_replicates, BootstrapError, MIN_REPLICATES,
};
use crate::stats::moments;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("grade {0} is outside the scale {{-1, 0, 1}}")]
    GradeOutOfScale(i64),
    #[error("record '{0}' is graded more than once by the same reviewer")]
    DuplicateRecord(String),
    #[error("expected exactly two reviewers, found {0:?}")]
    ReviewerCount(Vec<String>),
    #[error("record '{record_id}' has no grade from reviewer '{reviewer}'")]
    MissingGrade { record_id: String, reviewer: String },
    #[error("at least two graded records are required, got {0}")]
    TooFewItems(usize),
    #[error("kappa is undefined: expected agreement is 1")]
    UndefinedKappa,
    #[error("cannot read grade sheet: {0}")]
    Read(String),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Grade {
    Rejected,
    Unclear,
    Included,
}

impl Grade {
    fn index(self) -> usize {
        match self {
            Grade::Rejected => 0,
            Grade::Unclear => 1,
            Grade::Included => 2,
        }
    }
}

impl TryFrom<i64> for Grade {
    type Error = AgreementError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Grade::Rejected),
            0 => Ok(Grade::Unclear),
            1 => Ok(Grade::Included),
            other => Err(AgreementError::GradeOutOfScale(other)),
        }
    }
}

impl From<Grade> for i64 {
    fn from(g: Grade) -> i64 {
        g.index() as i64 - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRow {
    pub record_id: String,
    pub first: Grade,
    pub second: Grade,
}

/// Paired grades from two reviewers, one row per record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeSheet {
    pub reviewers: [String; 2],
    pub rows: Vec<GradeRow>,
}

impl GradeSheet {
    pub fn from_rows(reviewers: [String; 2], rows: Vec<GradeRow>) -> Result<Self, AgreementError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.record_id.as_str()) {
                return Err(AgreementError::DuplicateRecord(r.record_id.clone()));
            }
        }
        Ok(GradeSheet { reviewers, rows })
    }

    /// Convenience constructor from integer pairs; record ids are `r1, r2, …`.
    pub fn from_pairs(pairs: &[(i64, i64)]) -> Result<Self, AgreementError> {
        let rows = pairs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                Ok(GradeRow {
                    record_id: format!("r{}", i + 1),
                    first: Grade::try_from(a)?,
                    second: Grade::try_from(b)?,
                })
            })
            .collect::<Result<_, AgreementError>>()?;
        Self::from_rows(["reviewer_1".into(), "reviewer_2".into()], rows)
    }

    /// Parse the long format `record_id, reviewer, grade`. Reviewers are
    /// ordered by name; records keep their first-appearance order.
    pub fn from_long_csv<R: Read>(reader: R) -> Result<Self, AgreementError> {
        #[derive(Deserialize)]
        struct Row {
            record_id: String,
            reviewer: String,
            grade: i64,
        }
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut order: Vec<String> = Vec::new();
        let mut grades: BTreeMap<String, BTreeMap<String, Grade>> = BTreeMap::new();
        let mut reviewers = BTreeSet::new();
        for row in csv.deserialize::<Row>() {
            let row = row.map_err(|e| AgreementError::Read(e.to_string()))?;
            let grade = Grade::try_from(row.grade)?;
            reviewers.insert(row.reviewer.clone());
            let entry = grades.entry(row.record_id.clone()).or_insert_with(|| {
                order.push(row.record_id.clone());
                BTreeMap::new()
            });
            if entry.insert(row.reviewer, grade).is_some() {
                return Err(AgreementError::DuplicateRecord(row.record_id));
            }
        }
        if grades.is_empty() {
            return Err(AgreementError::TooFewItems(0));
        }
        let reviewers: Vec<String> = reviewers.into_iter().collect();
        let [r1, r2]: [String; 2] = reviewers
            .clone()
            .try_into()
            .map_err(|_| AgreementError::ReviewerCount(reviewers))?;
        let mut rows = Vec::with_capacity(order.len());
        for id in order {
            let g = &grades[&id];
            let get = |r: &String| {
                g.get(r).copied().ok_or_else(|| AgreementError::MissingGrade {
                    record_id: id.clone(),
                    reviewer: r.clone(),
                })
            };
            rows.push(GradeRow {
                first: get(&r1)?,
                second: get(&r2)?,
                record_id: id.clone(),
            });
        }
        Self::from_rows([r1, r2], rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub observed_weighted_agreement: f64,
    pub expected_weighted_agreement: f64,
    pub concordance_fraction: f64,
    pub n_concordant: usize,
    pub n_items: usize,
}

const CATEGORIES: usize = 3;

fn weight(i: usize, j: usize) -> f64 {
    1.0 - i.abs_diff(j) as f64 / (CATEGORIES - 1) as f64
}

fn kappa_of(pairs: impl Iterator<Item = (usize, usize)>) -> Result<KappaResult, AgreementError> {
    let mut joint = [[0usize; CATEGORIES]; CATEGORIES];
    let mut n = 0usize;
    for (a, b) in pairs {
        joint[a][b] += 1;
        n += 1;
    }
    if n < 2 {
        return Err(AgreementError::TooFewItems(n));
    }
    let nf = n as f64;
    let mut row = [0.0; CATEGORIES];
    let mut col = [0.0; CATEGORIES];
    let mut po = 0.0;
    for i in 0..CATEGORIES {
        for j in 0..CATEGORIES {
            let c = joint[i][j] as f64;
            row[i] += c / nf;
            col[j] += c / nf;
            po += weight(i, j) * c / nf;
        }
    }
    let mut pe = 0.0;
    for i in 0..CATEGORIES {
        for j in 0..CATEGORIES {
            pe += row[i] * col[j] * weight(i, j);
        }
    }
    if pe >= 1.0 - 1e-12 {
        return Err(AgreementError::UndefinedKappa);
    }
    let n_concordant = (0..CATEGORIES).map(|i| joint[i][i]).sum();
    Ok(KappaResult {
        kappa: (po - pe) / (1.0 - pe),
        observed_weighted_agreement: po,
        expected_weighted_agreement: pe,
        concordance_fraction: n_concordant as f64 / nf,
        n_concordant,
        n_items: n,
    })
}

pub fn weighted_absolute_kappa(sheet: &GradeSheet) -> Result<KappaResult, AgreementError> {
    kappa_of(sheet.rows.iter().map(|r| (r.first.index(), r.second.index())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapKappa {
    pub replications: usize,
    pub seed: u64,
    pub kappa: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub mean: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub n_failures: usize,
    pub z0: f64,
    pub acceleration: f64,
}

/// Resample records with replacement `replications` times and form a 95%
/// BCa interval with jackknife acceleration. Replicates whose kappa is
/// undefined are dropped and counted.
pub fn bootstrap_kappa(
    sheet: &GradeSheet,
    replications: usize,
    seed: u64,
) -> Result<BootstrapKappa, AgreementError> {
    if replications < MIN_REPLICATES {
        return Err(BootstrapError::TooFewReplicates {
            requested: replications,
            minimum: MIN_REPLICATES,
        }
        .into());
    }
    let point = weighted_absolute_kappa(sheet)?.kappa;
    let idx: Vec<(usize, usize)> = sheet
        .rows
        .iter()
        .map(|r| (r.first.index(), r.second.index()))
        .collect();
    let n = idx.len();
    let reps = run_replicates(n, replications, seed, |draw| {
        kappa_of(draw.iter().map(|&i| idx[i])).ok().map(|k| k.kappa)
    });
    let n_failures = reps.n_failures();
    let valid = reps.valid();
    if valid.is_empty() {
        return Err(BootstrapError::AllReplicatesFailed(replications).into());
    }
    let jackknife: Vec<f64> = (0..n)
        .filter_map(|skip| {
            kappa_of(idx.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, p)| *p))
                .ok()
                .map(|k| k.kappa)
        })
        .collect();
    let bca = bca_interval(point, &valid, jackknife_acceleration(&jackknife), 0.95)?;
    let (mean, skewness, excess_kurtosis) = moments(&valid);
    Ok(BootstrapKappa {
        replications,
        seed,
        kappa: point,
        ci_low: bca.low,
        ci_high: bca.high,
        level: 0.95,
        mean,
        skewness,
        excess_kurtosis,
        n_failures,
        z0: bca.z0,
        acceleration: bca.acceleration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn four_item_sheet_by_hand() {
        // Pairs (1,1) (1,0) (0,−1) (−1,−1): weights 1, ½, ½, 1 → P_o = 3/4.
        // Rater 1 marginals (−1,0,1) = (¼,¼,½); rater 2 = (½,¼,¼).
        // P_e = ¼·⅝ + ¼·⅝ + ½·⅜ = ½, so kappa = (¾ − ½)/(1 − ½) = ½.
        let p1 = [0.25, 0.25, 0.5];
        let p2 = [0.5, 0.25, 0.25];
        let w = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]];
        let mut pe = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                pe += p1[i] * p2[j] * w[i][j];
            }
        }
        assert_abs_diff_eq!(pe, 0.5, epsilon = 1e-15);
        let expected = 0.5;

        let sheet = GradeSheet::from_pairs(&[(1, 1), (1, 0), (0, -1), (-1, -1)]).unwrap();
        let k = weighted_absolute_kappa(&sheet).unwrap();
        assert_abs_diff_eq!(k.observed_weighted_agreement, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(k.expected_weighted_agreement, pe, epsilon = 1e-15);
        assert_abs_diff_eq!(k.kappa, expected, epsilon = 1e-15);
        assert_eq!(k.n_concordant, 2);
    }

    #[test]
    fn perfect_agreement_is_one() {
        let sheet = GradeSheet::from_pairs(&[(1, 1), (0, 0), (-1, -1), (1, 1)]).unwrap();
        assert_eq!(weighted_absolute_kappa(&sheet).unwrap().kappa, 1.0);
    }

    #[test]
    fn single_category_is_undefined() {
        let sheet = GradeSheet::from_pairs(&[(1, 1), (1, 1), (1, 1)]).unwrap();
        assert_eq!(weighted_absolute_kappa(&sheet), Err(AgreementError::UndefinedKappa));
    }

    #[test]
    fn identical_columns_make_bootstrap_degenerate() {
        let sheet = GradeSheet::from_pairs(&[(1, 1), (0, 0), (-1, -1), (1, 1), (-1, -1)]).unwrap();
        let err = bootstrap_kappa(&sheet, 200, 3).unwrap_err();
        assert!(matches!(err, AgreementError::Bootstrap(BootstrapError::Degenerate(_))));
        assert!(matches!(
            bootstrap_kappa(&sheet, 99, 3),
            Err(AgreementError::Bootstrap(BootstrapError::TooFewReplicates { .. }))
        ));
    }

    #[test]
    fn long_csv_parsing_and_validation() {
        let ok = "record_id,reviewer,grade\na,ST,1\na,MS,0\nb,MS,-1\nb,ST,-1\n";
        let s = GradeSheet::from_long_csv(ok.as_bytes()).unwrap();
        assert_eq!(s.reviewers, ["MS".to_string(), "ST".to_string()]);
        assert_eq!(s.rows[0].first, Grade::Unclear);
        assert_eq!(s.rows[0].second, Grade::Included);

        let bad = "record_id,reviewer,grade\na,MS,2\n";
        assert_eq!(GradeSheet::from_long_csv(bad.as_bytes()), Err(AgreementError::GradeOutOfScale(2)));
        let three = "record_id,reviewer,grade\na,MS,1\na,ST,1\na,XX,1\n";
        assert!(matches!(GradeSheet::from_long_csv(three.as_bytes()), Err(AgreementError::ReviewerCount(_))));
        let missing = "record_id,reviewer,grade\na,MS,1\na,ST,1\nb,MS,0\n";
        assert!(matches!(GradeSheet::from_long_csv(missing.as_bytes()), Err(AgreementError::MissingGrade { .. })));
        let dup = "record_id,reviewer,grade\na,MS,1\na,MS,0\n";
        assert!(matches!(GradeSheet::from_long_csv(dup.as_bytes()), Err(AgreementError::DuplicateRecord(_))));
    }

    /// Unweighted Cohen's kappa from a 2×2 table.
    fn cohen(pairs: &[(i64, i64)]) -> f64 {
        let n = pairs.len() as f64;
        let po = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
        let p1 = pairs.iter().filter(|(a, _)| *a == 1).count() as f64 / n;
        let p2 = pairs.iter().filter(|(_, b)| *b == 1).count() as f64 / n;
        let pe = p1 * p2 + (1.0 - p1) * (1.0 - p2);
        (po - pe) / (1.0 - pe)
    }

    proptest! {
        #[test]
        fn binary_grades_reduce_to_cohen(pairs in proptest::collection::vec((prop_oneof![Just(-1i64), Just(1)], prop_oneof![Just(-1i64), Just(1)]), 2..40)) {
            let sheet = GradeSheet::from_pairs(&pairs).unwrap();
            if let Ok(k) = weighted_absolute_kappa(&sheet) {
                prop_assert!((k.kappa - cohen(&pairs)).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_and_swap_invariance(pairs in proptest::collection::vec((-1i64..=1, -1i64..=1), 2..30), rot in 0usize..30) {
            let base = weighted_absolute_kappa(&GradeSheet::from_pairs(&pairs).unwrap());
            let mut rotated = pairs.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            let mut reversed = pairs.clone();
            reversed.reverse();
            let swapped: Vec<(i64, i64)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
            match base {
                Ok(k) => {
                    let r = weighted_absolute_kappa(&GradeSheet::from_pairs(&rotated).unwrap()).unwrap();
                    let v = weighted_absolute_kappa(&GradeSheet::from_pairs(&reversed).unwrap()).unwrap();
                    let s = weighted_absolute_kappa(&GradeSheet::from_pairs(&swapped).unwrap()).unwrap();
                    prop_assert_eq!(k.kappa, r.kappa);
                    prop_assert_eq!(k.kappa, v.kappa);
                    prop_assert!((k.kappa - s.kappa).abs() < 1e-12);
                    prop_assert!(k.kappa <= 1.0);
                }
                Err(e) => prop_assert_eq!(e, AgreementError::UndefinedKappa),
            }
        }
    }
}
