use std::collections::BTreeSet;
use std::path::Path;

use casma_core::bias::{doi_plot, lfk_index};
use casma_core::effects::{load_trial_table, study_effects, CorrectionPolicy};
use casma_core::ingest::{PrismaLedger, PrismaStage};
use casma_core::meta::{
    bootstrap_pool, heterogeneity_stats, leave_one_out, pool_random_effects,
    tau2_ci_profile_likelihood, tau2_ci_qprofile, BootstrapOptions, Estimator,
};
use casma_core::report::{
    read_report_json, render_reports, BiasArtifact, PooledArtifact, Provenance, ReportDocument,
    ReportFormat,
};

fn document() -> ReportDocument {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/trials.csv");
    let arms = load_trial_table(&path).unwrap();
    let effects = study_effects(&arms, CorrectionPolicy::default()).unwrap();
    let provenance = Provenance::new(Some(7)).with_input("trials", "00ff");
    let pooled = PooledArtifact {
        provenance: provenance.clone(),
        pooled: pool_random_effects(&effects, Estimator::Reml).unwrap(),
        heterogeneity: Some(heterogeneity_stats(&effects, Estimator::Reml).unwrap()),
        qprofile: Some(tau2_ci_qprofile(&effects, 0.95).unwrap()),
        profile: Some(tau2_ci_profile_likelihood(&effects, 50, 0.95).unwrap()),
        leave_one_out: Some(leave_one_out(&effects, Estimator::Reml).unwrap()),
        bootstrap: Some(bootstrap_pool(&effects, BootstrapOptions::new(500, 7)).unwrap()),
        control_counts: Some((91, 398)),
        effects: effects.clone(),
    };
    let plot = doi_plot(&effects).unwrap();
    let bias = BiasArtifact {
        provenance,
        lfk: lfk_index(&plot),
        plot,
    };
    let mut ledger = PrismaLedger::new();
    ledger.append(PrismaStage::new("identified", 812, 0, "")).unwrap();
    ledger.append(PrismaStage::new("deduplicated", 812, 67, "duplicate")).unwrap();
    ReportDocument::assemble(&pooled, Some(&bias), Some(&ledger)).unwrap()
}

#[test]
fn json_round_trip_and_all_formats() {
    let doc = document();
    let dir = tempfile::tempdir().unwrap();
    let formats: BTreeSet<ReportFormat> =
        [ReportFormat::Json, ReportFormat::Svg, ReportFormat::Markdown].into();
    let written = render_reports(&doc, &formats, dir.path()).unwrap();
    let names: BTreeSet<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for expected in ["report.json", "forest.svg", "doi.svg", "profile.svg", "prisma.svg", "report.md"] {
        assert!(names.contains(expected), "missing {expected}");
    }
    let back = read_report_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, doc);
    assert_eq!(doc.summary_of_findings.unwrap().difference_per_1000, -82);
    assert_eq!(doc.tau2_intervals.len(), 2);

    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("82 fewer per 1,000"));
    assert!(md.contains("| deduplicated | 812 | 67 | duplicate |"));
}

#[test]
fn rendering_is_deterministic() {
    let doc = document();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let formats: BTreeSet<ReportFormat> =
        [ReportFormat::Json, ReportFormat::Svg, ReportFormat::Markdown].into();
    render_reports(&doc, &formats, a.path()).unwrap();
    render_reports(&document(), &formats, b.path()).unwrap();
    for name in ["report.json", "forest.svg", "doi.svg", "profile.svg", "prisma.svg", "report.md"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}
