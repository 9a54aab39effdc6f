use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("stage '{stage}' excludes {excluded} of only {records_in} records")]
    ExcessExclusion {
        stage: String,
        records_in: usize,
        excluded: usize,
    },
    #[error("stage '{stage}' receives {records_in} records but the previous stage passed on {expected}")]
    Discontinuity {
        stage: String,
        records_in: usize,
        expected: usize,
    },
}

/// One row of the PRISMA flow: how many records entered a stage and how many
/// it excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrismaStage {
    pub stage_name: String,
    pub records_in: usize,
    pub records_excluded: usize,
    pub reason: String,
}

impl PrismaStage {
    pub fn new(
        stage_name: impl Into<String>,
        records_in: usize,
        records_excluded: usize,
        reason: impl Into<String>,
    ) -> Self {
        PrismaStage {
            stage_name: stage_name.into(),
            records_in,
            records_excluded,
            reason: reason.into(),
        }
    }

    pub fn records_out(&self) -> usize {
        self.records_in - self.records_excluded
    }
}

/// Ordered stage counts. Each stage's input equals the previous stage's
/// output; stages are append-only.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawLedger", into = "RawLedger")]
pub struct PrismaLedger {
    stages: Vec<PrismaStage>,
}

#[derive(Serialize, Deserialize)]
struct RawLedger {
    stages: Vec<PrismaStage>,
}

impl TryFrom<RawLedger> for PrismaLedger {
    type Error = LedgerError;

    fn try_from(raw: RawLedger) -> Result<Self, Self::Error> {
        let mut ledger = PrismaLedger::new();
        for stage in raw.stages {
            ledger.append(stage)?;
        }
        Ok(ledger)
    }
}

impl From<PrismaLedger> for RawLedger {
    fn from(l: PrismaLedger) -> Self {
        RawLedger { stages: l.stages }
    }
}

impl PrismaLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stages(&self) -> &[PrismaStage] {
        &self.stages
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Records passed on by the last stage.
    pub fn remaining(&self) -> Option<usize> {
        self.stages.last().map(PrismaStage::records_out)
    }

    pub fn append(&mut self, stage: PrismaStage) -> Result<(), LedgerError> {
        if stage.records_excluded > stage.records_in {
            return Err(LedgerError::ExcessExclusion {
                stage: stage.stage_name,
                records_in: stage.records_in,
                excluded: stage.records_excluded,
            });
        }
        if let Some(expected) = self.remaining() {
            if expected != stage.records_in {
                return Err(LedgerError::Discontinuity {
                    stage: stage.stage_name,
                    records_in: stage.records_in,
                    expected,
                });
            }
        }
        self.stages.push(stage);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation_between_stages() {
        let mut l = PrismaLedger::new();
        l.append(PrismaStage::new("identified", 100, 0, "")).unwrap();
        l.append(PrismaStage::new("dedup", 100, 10, "duplicate")).unwrap();
        let err = l.append(PrismaStage::new("screen", 95, 5, "")).unwrap_err();
        assert!(matches!(err, LedgerError::Discontinuity { expected: 90, .. }));
        l.append(PrismaStage::new("screen", 90, 60, "regex")).unwrap();
        assert_eq!(l.remaining(), Some(30));
    }

    #[test]
    fn appending_never_changes_earlier_stages() {
        let mut l = PrismaLedger::new();
        l.append(PrismaStage::new("a", 10, 2, "")).unwrap();
        let before = l.stages()[0].clone();
        l.append(PrismaStage::new("b", 8, 8, "")).unwrap();
        assert_eq!(l.stages()[0], before);
    }

    #[test]
    fn over_exclusion_rejected() {
        let mut l = PrismaLedger::new();
        assert!(l.append(PrismaStage::new("a", 1, 2, "")).is_err());
    }

    #[test]
    fn deserialization_validates() {
        let bad = r#"{"stages":[{"stage_name":"a","records_in":5,"records_excluded":1,"reason":""},
                                {"stage_name":"b","records_in":5,"records_excluded":0,"reason":""}]}"#;
        assert!(serde_json::from_str::<PrismaLedger>(bad).is_err());
        let good = bad.replace("\"records_in\":5,\"records_excluded\":0", "\"records_in\":4,\"records_excluded\":0");
        let l: PrismaLedger = serde_json::from_str(&good).unwrap();
        assert_eq!(l.stages().len(), 2);
    }
}
