//! Human-facing outputs: forest and Doi plot data, PRISMA flow counts,
//! Summary-of-Findings arithmetic, and their JSON/SVG/Markdown renderings.

mod artifacts;
mod markdown;
mod svg;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{DoiPlot, LfkResult};
use crate::effects::EffectEstimate;
use crate::ingest::PrismaLedger;
use crate::meta::{
    BootstrapSummary, Heterogeneity, LooEntry, PooledResult, ProfileLikelihood, Tau2Interval,
};

pub use artifacts::{
    digest_bytes, digest_file, BiasArtifact, EffectsArtifact, IrrArtifact, PooledArtifact,
    Provenance,
};
pub use markdown::markdown_report;
pub use svg::{doi_svg, forest_svg, prisma_svg, profile_svg};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("control group total must be positive")]
    ZeroControlTotal,
    #[error("control events {events} exceed total {total}")]
    ControlEventsExceedTotal { events: u64, total: u64 },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("unknown report format '{0}' (expected json, svg or markdown)")]
    UnknownFormat(String),
}

/// Absolute effects per 1,000 patients. Negative differences are fewer
/// events with the intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SofRow {
    pub control_risk_per_1000: i64,
    pub intervention_risk_per_1000: i64,
    pub intervention_ci_per_1000: (i64, i64),
    pub difference_per_1000: i64,
    pub difference_ci_per_1000: (i64, i64),
}

impl SofRow {
    pub fn describe(&self) -> String {
        fn phrase(d: i64) -> String {
            match d.cmp(&0) {
                std::cmp::Ordering::Less => format!("{} fewer", -d),
                std::cmp::Ordering::Greater => format!("{} more", d),
                std::cmp::Ordering::Equal => "0 fewer".to_string(),
            }
        }
        format!(
            "{} per 1,000 (from {} to {})",
            phrase(self.difference_per_1000),
            phrase(self.difference_ci_per_1000.0),
            phrase(self.difference_ci_per_1000.1)
        )
    }
}

/// Per-1,000 arithmetic from a risk ratio and its interval. All values are
/// carried unrounded and rounded half away from zero once at the end.
pub fn sof_from_rr(
    rr: f64,
    rr_low: f64,
    rr_high: f64,
    control_events: u64,
    control_total: u64,
) -> Result<SofRow, ReportError> {
    if control_total == 0 {
        return Err(ReportError::ZeroControlTotal);
    }
    if control_events > control_total {
        return Err(ReportError::ControlEventsExceedTotal {
            events: control_events,
            total: control_total,
        });
    }
    let cr = 1000.0 * control_events as f64 / control_total as f64;
    let round = |x: f64| x.round() as i64;
    Ok(SofRow {
        control_risk_per_1000: round(cr),
        intervention_risk_per_1000: round(cr * rr),
        intervention_ci_per_1000: (round(cr * rr_low), round(cr * rr_high)),
        difference_per_1000: round(cr * (rr - 1.0)),
        difference_ci_per_1000: (round(cr * (rr_low - 1.0)), round(cr * (rr_high - 1.0))),
    })
}

pub fn sof_absolute_effects(
    pooled: &PooledResult,
    control_events: u64,
    control_total: u64,
) -> Result<SofRow, ReportError> {
    sof_from_rr(pooled.rr, pooled.rr_low, pooled.rr_high, control_events, control_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub study_id: String,
    pub label: String,
    pub rr: f64,
    pub rr_low: f64,
    pub rr_high: f64,
    pub weight_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestData {
    pub rows: Vec<ForestRow>,
    pub pooled_rr: f64,
    pub pooled_low: f64,
    pub pooled_high: f64,
    pub tau2: f64,
    pub i_squared: f64,
}

const Z_975: f64 = 1.959_963_984_540_054;

pub fn forest_data(estimates: &[EffectEstimate], pooled: &PooledResult) -> ForestData {
    let weights = pooled.weights_percent(estimates);
    ForestData {
        rows: estimates
            .iter()
            .zip(weights)
            .map(|(e, w)| {
                let se = e.vi.sqrt();
                ForestRow {
                    study_id: e.study_id.clone(),
                    label: e.display_name().to_string(),
                    rr: e.yi.exp(),
                    rr_low: (e.yi - Z_975 * se).exp(),
                    rr_high: (e.yi + Z_975 * se).exp(),
                    weight_percent: w,
                }
            })
            .collect(),
        pooled_rr: pooled.rr,
        pooled_low: pooled.rr_low,
        pooled_high: pooled.rr_high,
        tau2: pooled.tau2,
        i_squared: pooled.i_squared,
    }
}

/// Everything the report renders, in one serializable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub provenance: Provenance,
    pub pooled: PooledResult,
    pub heterogeneity: Option<Heterogeneity>,
    pub forest: ForestData,
    pub tau2_intervals: Vec<Tau2Interval>,
    pub profile: Option<ProfileLikelihood>,
    pub leave_one_out: Option<Vec<LooEntry>>,
    pub bootstrap: Option<BootstrapSummary>,
    pub doi_plot: Option<DoiPlot>,
    pub lfk: Option<LfkResult>,
    pub prisma: Option<PrismaLedger>,
    pub summary_of_findings: Option<SofRow>,
}

impl ReportDocument {
    pub fn assemble(
        pooled: &PooledArtifact,
        bias: Option<&BiasArtifact>,
        ledger: Option<&PrismaLedger>,
    ) -> Result<Self, ReportError> {
        let sof = match pooled.control_counts {
            Some((events, total)) => Some(sof_absolute_effects(&pooled.pooled, events, total)?),
            None => None,
        };
        let mut provenance = pooled.provenance.clone();
        if let Some(b) = bias {
            provenance.merge(&b.provenance);
        }
        Ok(ReportDocument {
            provenance,
            forest: forest_data(&pooled.effects, &pooled.pooled),
            pooled: pooled.pooled.clone(),
            heterogeneity: pooled.heterogeneity,
            tau2_intervals: pooled
                .qprofile
                .iter()
                .cloned()
                .chain(pooled.profile.iter().map(|p| p.interval.clone()))
                .collect(),
            profile: pooled.profile.clone(),
            leave_one_out: pooled.leave_one_out.clone(),
            bootstrap: pooled.bootstrap.clone(),
            doi_plot: bias.map(|b| b.plot.clone()),
            lfk: bias.map(|b| b.lfk),
            prisma: ledger.cloned(),
            summary_of_findings: sof,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Svg,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    std::fs::write(&path, contents).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);
    Ok(())
}

/// Write the requested formats into `out_dir` and return the paths written.
pub fn render_reports(
    doc: &ReportDocument,
    formats: &BTreeSet<ReportFormat>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Json => {
                let json = serde_json::to_string_pretty(doc).expect("report serializes");
                write(out_dir.join("report.json"), &json, &mut written)?;
            }
            ReportFormat::Svg => {
                write(out_dir.join("forest.svg"), &forest_svg(&doc.forest), &mut written)?;
                if let (Some(plot), Some(lfk)) = (&doc.doi_plot, &doc.lfk) {
                    write(out_dir.join("doi.svg"), &doi_svg(plot, lfk), &mut written)?;
                }
                if let Some(profile) = &doc.profile {
                    write(out_dir.join("profile.svg"), &profile_svg(profile), &mut written)?;
                }
                if let Some(ledger) = &doc.prisma {
                    write(out_dir.join("prisma.svg"), &prisma_svg(ledger), &mut written)?;
                }
            }
            ReportFormat::Markdown => {
                write(out_dir.join("report.md"), &markdown_report(doc), &mut written)?;
            }
        }
    }
    Ok(written)
}

pub fn read_report_json(path: &Path) -> Result<ReportDocument, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
