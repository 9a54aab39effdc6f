//! Evidence-synthesis toolkit.
//!
//! The crate covers the computational half of a semi-automated systematic
//! review: harvesting bibliographic records, fuzzy title deduplication,
//! regular-expression pre-screening with a PRISMA ledger, inter-rater
//! agreement on ordinal grades, and a random-effects meta-analysis engine
//! for risk ratios (heterogeneity, τ² intervals, leave-one-out, bootstrap,
//! Doi plot / LFK index and Summary-of-Findings arithmetic).
//!
//! Every statistical routine is a pure function of its inputs; bootstrap
//! procedures take an explicit seed and draw one independent random stream
//! per replicate, so serial and parallel execution produce identical output.

pub mod agreement;
pub mod bias;
pub mod bootstrap;
pub mod dedup;
pub mod effects;
pub mod ingest;
pub mod meta;
pub mod report;
pub mod screen;
pub mod stats;

pub use agreement::{BootstrapKappa, Grade, GradeSheet, KappaResult};
pub use bias::{DoiPlot, LfkClass, LfkResult};
pub use dedup::DissimilarityMatrix;
pub use effects::{ArmCount, EffectEstimate, StudyArms};
pub use ingest::{PrismaLedger, PrismaStage, Record, RecordType, Source};
pub use meta::{BootstrapSummary, Estimator, LooEntry, PooledResult, Tau2Interval};
pub use report::SofRow;
pub use screen::{RuleSet, ScreenDecision, ScreenStatus};
