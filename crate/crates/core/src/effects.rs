//! Per-trial arm counts and log risk-ratio effect sizes.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EffectsError {
    #[error("arm has {events} events but only {total} patients")]
    EventsExceedTotal { events: u32, total: u32 },
    #[error("arm total must be positive")]
    ZeroTotal,
    #[error("arm total {arm_total} exceeds the combined total {all_arms_total}")]
    ArmExceedsTotal { arm_total: u32, all_arms_total: u32 },
    #[error("splitting a control of {total} patients by {arm_total}/{all_arms_total} leaves no patients")]
    DegenerateSplit {
        total: u32,
        arm_total: u32,
        all_arms_total: u32,
    },
    #[error("a zero cell requires a continuity correction, which the policy forbids")]
    CorrectionForbidden,
    #[error("cannot read trial table {path}: {message}")]
    Read { path: String, message: String },
    #[error("study '{study_id}' (line {line}): {message}")]
    Row {
        study_id: String,
        line: usize,
        message: String,
    },
    #[error("study id '{0}' appears more than once")]
    DuplicateStudy(String),
}

/// Events (recurrences) out of patients in one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCount {
    pub events: u32,
    pub total: u32,
}

impl ArmCount {
    pub fn new(events: u32, total: u32) -> Result<Self, EffectsError> {
        if total == 0 {
            return Err(EffectsError::ZeroTotal);
        }
        if events > total {
            return Err(EffectsError::EventsExceedTotal { events, total });
        }
        Ok(ArmCount { events, total })
    }

    pub fn risk(&self) -> f64 {
        f64::from(self.events) / f64::from(self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyArms {
    pub study_id: String,
    pub label: String,
    pub intervention: ArmCount,
    pub control: ArmCount,
    pub followup_months: u32,
    pub tags: BTreeSet<String>,
}

impl StudyArms {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub study_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Log risk ratio, intervention over control.
    pub yi: f64,
    /// Sampling variance of `yi`.
    pub vi: f64,
    pub corrected: bool,
}

impl EffectEstimate {
    pub fn new(study_id: impl Into<String>, yi: f64, vi: f64) -> Self {
        EffectEstimate {
            study_id: study_id.into(),
            label: None,
            yi,
            vi,
            corrected: false,
        }
    }

    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.study_id)
    }
}

/// Share of a control group assigned to one intervention arm of a
/// multi-arm trial, truncated to whole patients.
pub fn split_control(
    control: ArmCount,
    arm_total: u32,
    all_arms_total: u32,
) -> Result<ArmCount, EffectsError> {
    if arm_total == 0 || all_arms_total == 0 {
        return Err(EffectsError::ZeroTotal);
    }
    if arm_total > all_arms_total {
        return Err(EffectsError::ArmExceedsTotal {
            arm_total,
            all_arms_total,
        });
    }
    let share = |x: u32| (u64::from(x) * u64::from(arm_total) / u64::from(all_arms_total)) as u32;
    let total = share(control.total);
    if total == 0 {
        return Err(EffectsError::DegenerateSplit {
            total: control.total,
            arm_total,
            all_arms_total,
        });
    }
    Ok(ArmCount {
        events: share(control.events),
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionPolicy {
    /// Add 0.5 to both event counts and 1 to both totals for studies with
    /// a zero cell.
    #[default]
    ZeroCellOnly,
    /// Refuse studies where a zero event count makes the ratio undefined.
    Forbid,
}

fn has_zero_cell(a: ArmCount, c: ArmCount) -> bool {
    a.events == 0 || c.events == 0 || a.events == a.total || c.events == c.total
}

pub fn log_risk_ratio(
    intervention: ArmCount,
    control: ArmCount,
    policy: CorrectionPolicy,
) -> Result<EffectEstimate, EffectsError> {
    let intervention = ArmCount::new(intervention.events, intervention.total)?;
    let control = ArmCount::new(control.events, control.total)?;
    let zero = has_zero_cell(intervention, control);
    if policy == CorrectionPolicy::Forbid && (intervention.events == 0 || control.events == 0) {
        return Err(EffectsError::CorrectionForbidden);
    }
    let corrected = zero && policy == CorrectionPolicy::ZeroCellOnly;
    let (ev, tot) = if corrected { (0.5, 1.0) } else { (0.0, 0.0) };
    let a = f64::from(intervention.events) + ev;
    let n1 = f64::from(intervention.total) + tot;
    let c = f64::from(control.events) + ev;
    let n2 = f64::from(control.total) + tot;
    Ok(EffectEstimate {
        study_id: String::new(),
        label: None,
        yi: ((a / n1) / (c / n2)).ln(),
        vi: 1.0 / a - 1.0 / n1 + 1.0 / c - 1.0 / n2,
        corrected,
    })
}

pub fn study_effect(study: &StudyArms, policy: CorrectionPolicy) -> Result<EffectEstimate, EffectsError> {
    let mut e = log_risk_ratio(study.intervention, study.control, policy).map_err(|err| {
        EffectsError::Row {
            study_id: study.study_id.clone(),
            line: 0,
            message: err.to_string(),
        }
    })?;
    e.study_id = study.study_id.clone();
    e.label = Some(study.label.clone());
    Ok(e)
}

pub fn study_effects(
    studies: &[StudyArms],
    policy: CorrectionPolicy,
) -> Result<Vec<EffectEstimate>, EffectsError> {
    studies.iter().map(|s| study_effect(s, policy)).collect()
}

#[derive(Debug, Deserialize)]
struct TrialRow {
    study_id: String,
    label: String,
    int_events: u32,
    int_total: u32,
    ctl_events: u32,
    ctl_total: u32,
    followup_months: u32,
    #[serde(default)]
    tags: String,
}

pub fn parse_trial_table<R: std::io::Read>(reader: R, path: &str) -> Result<Vec<StudyArms>, EffectsError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in csv.deserialize::<TrialRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| EffectsError::Read {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        let row_err = |message: String| EffectsError::Row {
            study_id: row.study_id.clone(),
            line,
            message,
        };
        let intervention =
            ArmCount::new(row.int_events, row.int_total).map_err(|e| row_err(format!("intervention arm: {e}")))?;
        let control =
            ArmCount::new(row.ctl_events, row.ctl_total).map_err(|e| row_err(format!("control arm: {e}")))?;
        if row.followup_months == 0 {
            return Err(row_err("follow-up must be at least one month".into()));
        }
        if !seen.insert(row.study_id.clone()) {
            return Err(EffectsError::DuplicateStudy(row.study_id));
        }
        out.push(StudyArms {
            study_id: row.study_id,
            label: row.label,
            intervention,
            control,
            followup_months: row.followup_months,
            tags: row
                .tags
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}

/// Read a trial table with columns `study_id, label, int_events, int_total,
/// ctl_events, ctl_total, followup_months, tags` (tags separated by `;`).
pub fn load_trial_table(path: &Path) -> Result<Vec<StudyArms>, EffectsError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| EffectsError::Read {
        path: display.clone(),
        message: e.to_string(),
    })?;
    parse_trial_table(file, &display)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn arm(e: u32, n: u32) -> ArmCount {
        ArmCount::new(e, n).unwrap()
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_control(arm(9, 30), 50, 150).unwrap(), arm(3, 10));
        assert_eq!(split_control(arm(9, 30), 150, 150).unwrap(), arm(9, 30));
        assert_eq!(split_control(arm(5, 21), 65, 195).unwrap(), arm(1, 7));
        assert!(matches!(split_control(arm(1, 2), 3, 2), Err(EffectsError::ArmExceedsTotal { .. })));
        assert!(matches!(split_control(arm(1, 2), 1, 5), Err(EffectsError::DegenerateSplit { .. })));
    }

    #[test]
    fn hornstein_by_hand() {
        // ln((17/56)/(26/53)) and 1/17 − 1/56 + 1/26 − 1/53
        let e = log_risk_ratio(arm(17, 56), arm(26, 53), CorrectionPolicy::default()).unwrap();
        assert_abs_diff_eq!(e.yi, -0.479_943, epsilon = 1e-6);
        assert_abs_diff_eq!(e.vi, 0.060_560, epsilon = 1e-6);
        assert!(!e.corrected);
    }

    #[test]
    fn yang_risk_ratio() {
        let e = log_risk_ratio(arm(1, 65), arm(9, 65), CorrectionPolicy::default()).unwrap();
        assert_abs_diff_eq!(e.yi.exp(), 1.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_risks_give_zero() {
        let e = log_risk_ratio(arm(10, 50), arm(10, 50), CorrectionPolicy::default()).unwrap();
        assert_eq!(e.yi, 0.0);
    }

    #[test]
    fn zero_cell_correction() {
        let e = log_risk_ratio(arm(0, 20), arm(3, 20), CorrectionPolicy::ZeroCellOnly).unwrap();
        assert!(e.corrected);
        assert_abs_diff_eq!(e.yi, ((0.5 / 21.0) / (3.5 / 21.0f64)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(e.vi, 1.0 / 0.5 - 1.0 / 21.0 + 1.0 / 3.5 - 1.0 / 21.0, epsilon = 1e-12);
        assert_eq!(
            log_risk_ratio(arm(0, 20), arm(0, 20), CorrectionPolicy::Forbid),
            Err(EffectsError::CorrectionForbidden)
        );
        // all-event arm is a zero cell in the 2×2 table
        assert!(log_risk_ratio(arm(20, 20), arm(3, 20), CorrectionPolicy::ZeroCellOnly).unwrap().corrected);
        assert!(!log_risk_ratio(arm(20, 20), arm(3, 20), CorrectionPolicy::Forbid).unwrap().corrected);
    }

    #[test]
    fn table_rows_validated() {
        let bad = "study_id,label,int_events,int_total,ctl_events,ctl_total,followup_months,tags\n\
                   s1,A 2000,5,4,1,10,12,\n";
        let err = parse_trial_table(bad.as_bytes(), "t").unwrap_err();
        assert!(matches!(err, EffectsError::Row { ref study_id, line: 2, .. } if study_id == "s1"));

        let dup = "study_id,label,int_events,int_total,ctl_events,ctl_total,followup_months,tags\n\
                   s1,A,1,4,1,10,12,a;b\ns1,B,1,4,1,10,12,\n";
        assert_eq!(parse_trial_table(dup.as_bytes(), "t"), Err(EffectsError::DuplicateStudy("s1".into())));

        assert!(parse_trial_table("".as_bytes(), "t").unwrap().is_empty());
        let header_only = "study_id,label,int_events,int_total,ctl_events,ctl_total,followup_months,tags\n";
        assert!(parse_trial_table(header_only.as_bytes(), "t").unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn swapping_arms_negates(a in 1u32..50, n1x in 0u32..50, c in 1u32..50, n2x in 0u32..50) {
            let i = arm(a, a + n1x + 1);
            let k = arm(c, c + n2x + 1);
            let f = log_risk_ratio(i, k, CorrectionPolicy::default()).unwrap();
            let b = log_risk_ratio(k, i, CorrectionPolicy::default()).unwrap();
            prop_assert!((f.yi + b.yi).abs() < 1e-12);
            prop_assert!((f.vi - b.vi).abs() < 1e-12);
            prop_assert!(f.vi > 0.0);
        }

        #[test]
        fn split_is_monotone(events in 0u32..100, extra in 1u32..100, arm_total in 1u32..200, bump in 0u32..50, rest in 0u32..200) {
            let control = arm(events, events + extra);
            let all = arm_total + bump + rest;
            if let (Ok(lo), Ok(hi)) = (split_control(control, arm_total, all), split_control(control, arm_total + bump, all)) {
                prop_assert!(lo.events <= hi.events && lo.total <= hi.total);
                prop_assert!(hi.events <= control.events && hi.total <= control.total);
                prop_assert!(hi.events <= hi.total);
            }
        }
    }
}
