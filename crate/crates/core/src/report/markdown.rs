//! Plain Markdown summary of a report document.

use std::fmt::Write;

use crate::bias::LfkClass;
use crate::meta::{Estimator, Tau2Method};

use super::ReportDocument;

fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::Reml => "REML",
        Estimator::Dl => "DerSimonian-Laird",
    }
}

pub fn markdown_report(doc: &ReportDocument) -> String {
    let mut out = String::new();
    let p = &doc.pooled;
    let _ = writeln!(out, "# Meta-analysis report\n");
    let _ = write!(out, "Tool version {}", doc.provenance.tool_version);
    if let Some(seed) = doc.provenance.seed {
        let _ = write!(out, "; seed {seed}");
    }
    out.push_str("\n\n");
    for (label, digest) in &doc.provenance.input_digests {
        let _ = writeln!(out, "- `{label}`: `{digest}`");
    }

    let _ = writeln!(out, "\n## Pooled estimate\n");
    let _ = writeln!(
        out,
        "{} studies, random effects ({}): RR {:.2} (95% CI {:.2} to {:.2}), z = {:.2}, p = {:.4}.\n",
        p.k,
        estimator_name(p.estimator),
        p.rr,
        p.rr_low,
        p.rr_high,
        p.z,
        p.p
    );
    let _ = writeln!(
        out,
        "Heterogeneity: Q = {:.3} on {} df, tau² = {:.4}, I² = {:.1}%.",
        p.q, p.df, p.tau2, p.i_squared
    );
    if let Some(h) = &doc.heterogeneity {
        let _ = writeln!(out, "Q test p = {:.4}.", h.p_value);
    }

    let _ = writeln!(out, "\n| Study | RR | 95% CI | Weight |\n|---|---|---|---|");
    for r in &doc.forest.rows {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} to {:.2} | {:.1}% |",
            r.label.replace('|', "\\|"),
            r.rr,
            r.rr_low,
            r.rr_high,
            r.weight_percent
        );
    }

    if !doc.tau2_intervals.is_empty() {
        let _ = writeln!(out, "\n## Between-study variance\n");
        for ci in &doc.tau2_intervals {
            let name = match ci.method {
                Tau2Method::QProfile => "Q-profile",
                Tau2Method::ProfileLikelihood => "Profile likelihood",
            };
            let _ = writeln!(
                out,
                "- {name}: {:.4} to {:.4}{}",
                ci.low,
                ci.high,
                if ci.truncated { " (truncated at search bound)" } else { "" }
            );
        }
    }

    if let Some(loo) = &doc.leave_one_out {
        let _ = writeln!(out, "\n## Leave one out\n\n| Omitted | RR | 95% CI | p |\n|---|---|---|---|");
        for e in loo {
            let r = &e.result;
            let _ = writeln!(
                out,
                "| {} | {:.2} | {:.2} to {:.2} | {:.4} |",
                e.omitted_study_id, r.rr, r.rr_low, r.rr_high, r.p
            );
        }
    }

    if let Some(b) = &doc.bootstrap {
        let _ = writeln!(out, "\n## Bootstrap\n");
        let _ = writeln!(
            out,
            "{} replications (seed {}, {} failed): BCa RR {:.2} to {:.2}.",
            b.replications, b.seed, b.n_failures, b.rr_low, b.rr_high
        );
    }

    if let Some(lfk) = &doc.lfk {
        let class = match lfk.classification {
            LfkClass::NoAsymmetry => "no asymmetry",
            LfkClass::Minor => "minor asymmetry",
            LfkClass::Major => "major asymmetry",
        };
        let _ = writeln!(out, "\n## Small-study effects\n");
        let _ = writeln!(out, "LFK index {:.2}: {class}.", lfk.index);
        if lfk.empty_limb {
            let _ = writeln!(out, "The apex is an extreme point, so one limb is empty.");
        }
    }

    if let Some(ledger) = &doc.prisma {
        let _ = writeln!(out, "\n## Study flow\n\n| Stage | In | Excluded | Reason |\n|---|---|---|---|");
        for s in ledger.stages() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.stage_name, s.records_in, s.records_excluded, s.reason
            );
        }
    }

    if let Some(sof) = &doc.summary_of_findings {
        let _ = writeln!(out, "\n## Absolute effects\n");
        let _ = writeln!(
            out,
            "Control risk {} per 1,000; with intervention {} per 1,000 ({} to {}).",
            sof.control_risk_per_1000,
            sof.intervention_risk_per_1000,
            sof.intervention_ci_per_1000.0,
            sof.intervention_ci_per_1000.1
        );
        let _ = writeln!(out, "Difference: {}.", sof.describe());
    }
    out
}
