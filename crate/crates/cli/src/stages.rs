//! One function per pipeline stage. Each reads its inputs from files and
//! writes its outputs to files, so any stage can run on its own from the
//! artifacts of earlier stages.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use casma_core::agreement::{bootstrap_kappa, weighted_absolute_kappa, GradeSheet};
use casma_core::bias::{doi_plot, lfk_index};
use casma_core::dedup::{find_duplicate_pairs, merge_duplicates};
use casma_core::effects::{load_trial_table, study_effects, CorrectionPolicy};
use casma_core::ingest::remote::{Harvester, HttpTransport, RemoteSource, SourceConfig};
use casma_core::ingest::{
    dedup_by_doi, import_records, read_corpus, write_corpus, DoiDedupMode, ImportFormat,
    PrismaLedger, PrismaStage, Record,
};
use casma_core::meta::{
    bootstrap_pool, heterogeneity_stats, leave_one_out, pool_random_effects,
    tau2_ci_profile_likelihood, tau2_ci_qprofile, BootstrapOptions, Estimator,
};
use casma_core::report::{
    digest_file, doi_svg, render_reports, BiasArtifact, EffectsArtifact, IrrArtifact,
    PooledArtifact, Provenance, ReportDocument, ReportFormat,
};
use casma_core::screen::{compile_ruleset, screen_corpus};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::Tau2Ci;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("missing upstream artifact {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Provenance with the digest of each input, keyed by file name so that
/// artifacts do not depend on where the inputs live.
fn provenance(seed: Option<u64>, inputs: &[&Path]) -> Result<Provenance> {
    let mut p = Provenance::new(seed);
    for path in inputs {
        let digest = digest_file(path).with_context(|| format!("reading {}", path.display()))?;
        p = p.with_input(file_label(path), digest);
    }
    Ok(p)
}

fn read_ledger(path: Option<&Path>) -> Result<PrismaLedger> {
    match path {
        Some(p) => read_json(p),
        None => Ok(PrismaLedger::new()),
    }
}

/// Drop records whose id was already seen (the same source record
/// imported twice); returns survivors and the number dropped.
fn drop_repeated_ids(records: Vec<Record>) -> (Vec<Record>, usize) {
    let mut seen = HashSet::new();
    let before = records.len();
    let kept: Vec<Record> = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Identification: combine local exports and already harvested records
/// into one corpus and open the PRISMA ledger.
pub fn identify(
    imports: &[PathBuf],
    harvested: Vec<Record>,
    out: &Path,
    ledger_out: &Path,
) -> Result<usize> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for path in imports {
        let format = ImportFormat::from_path(path)
            .with_context(|| format!("{}: expected a .csv or .jsonl file", path.display()))?;
        let outcome = import_records(path, format)?;
        skipped += outcome.skipped.len();
        records.extend(outcome.records);
    }
    records.extend(harvested);
    let identified = records.len();
    let (records, repeats) = drop_repeated_ids(records);
    write_corpus(out, &records)?;
    let mut ledger = PrismaLedger::new();
    ledger.append(PrismaStage::new(
        "identification",
        identified,
        repeats,
        format!("repeated source records: {repeats}; rows without a title skipped: {skipped}"),
    ))?;
    write_json(ledger_out, &ledger)?;
    Ok(records.len())
}

pub fn harvest_remote(
    source: RemoteSource,
    query: &str,
    settings: SourceConfig,
    max_pages: Option<usize>,
) -> Result<Vec<Record>> {
    let transport = HttpTransport::new(
        concat!("casma/", env!("CARGO_PKG_VERSION")),
        std::time::Duration::from_secs(30),
    );
    let harvester = Harvester::new(source, settings, transport);
    let (found, _) = harvester.fetch_all(query, max_pages)?;
    Ok(found.into_iter().map(|h| h.record).collect())
}

pub struct DedupSummary {
    pub doi_removed: usize,
    pub title_removed: usize,
    pub kept: usize,
}

/// Exact-DOI collapse followed by the title edit-distance rule. Pairs
/// below `threshold` are written to `pairs_out` as `id_a,id_b,distance`.
pub fn dedup(
    input: &Path,
    threshold: usize,
    pairs_out: &Path,
    out: &Path,
    ledger_in: Option<&Path>,
    ledger_out: Option<&Path>,
) -> Result<DedupSummary> {
    let records = read_corpus(input)?;
    let by_doi = dedup_by_doi(&records, DoiDedupMode::Full);
    let titles: Vec<&str> = by_doi.kept.iter().map(|r| r.title.as_str()).collect();
    let pairs = find_duplicate_pairs(&titles, threshold)?;

    let mut w = csv::Writer::from_path(pairs_out)
        .with_context(|| format!("writing {}", pairs_out.display()))?;
    w.write_record(["id_a", "id_b", "distance"])?;
    for p in &pairs {
        w.write_record([
            by_doi.kept[p.i].id.as_str(),
            by_doi.kept[p.j].id.as_str(),
            &p.distance.to_string(),
        ])?;
    }
    w.flush()?;

    let index_pairs: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    let by_title = merge_duplicates(&by_doi.kept, &index_pairs)?;
    write_corpus(out, &by_title.kept)?;

    if let Some(ledger_out) = ledger_out {
        let mut ledger = read_ledger(ledger_in)?;
        ledger.append(PrismaStage::new(
            "DOI deduplication",
            records.len(),
            by_doi.removed.len(),
            "identical DOI",
        ))?;
        ledger.append(PrismaStage::new(
            "title deduplication",
            by_doi.kept.len(),
            by_title.removed.len(),
            format!("title edit distance below {threshold}"),
        ))?;
        write_json(ledger_out, &ledger)?;
    }
    Ok(DedupSummary {
        doi_removed: by_doi.removed.len(),
        title_removed: by_title.removed.len(),
        kept: by_title.kept.len(),
    })
}

pub fn screen(
    rules: &Path,
    input: &Path,
    decisions_out: &Path,
    ledger_in: Option<&Path>,
    ledger_out: &Path,
) -> Result<usize> {
    let rules = compile_ruleset(rules)?;
    let records = read_corpus(input)?;
    let ledger = read_ledger(ledger_in)?;
    let (decisions, ledger) = screen_corpus(&records, &rules, &ledger)?;
    let mut w = BufWriter::new(
        fs::File::create(decisions_out)
            .with_context(|| format!("writing {}", decisions_out.display()))?,
    );
    for d in &decisions {
        writeln!(w, "{}", serde_json::to_string(d)?)?;
    }
    w.flush()?;
    write_json(ledger_out, &ledger)?;
    Ok(decisions.len())
}

pub fn irr(grades: &Path, replications: usize, seed: u64, out: &Path) -> Result<IrrArtifact> {
    let file = fs::File::open(grades).with_context(|| format!("reading {}", grades.display()))?;
    let sheet = GradeSheet::from_long_csv(file)?;
    let kappa = weighted_absolute_kappa(&sheet)?;
    let bootstrap = if replications > 0 {
        Some(bootstrap_kappa(&sheet, replications, seed)?)
    } else {
        None
    };
    let artifact = IrrArtifact {
        provenance: provenance(Some(seed), &[grades])?,
        kappa,
        bootstrap,
    };
    write_json(out, &artifact)?;
    Ok(artifact)
}

pub fn extract(
    trials: &Path,
    correction: CorrectionPolicy,
    seed: Option<u64>,
    out: &Path,
) -> Result<EffectsArtifact> {
    let arms = load_trial_table(trials)?;
    let studies = study_effects(&arms, correction)?;
    let control_events = arms.iter().map(|a| u64::from(a.control.events)).sum();
    let control_total = arms.iter().map(|a| u64::from(a.control.total)).sum();
    let artifact = EffectsArtifact {
        provenance: provenance(seed, &[trials])?,
        studies,
        control_events,
        control_total,
    };
    write_json(out, &artifact)?;
    Ok(artifact)
}

pub struct PoolOptions {
    pub estimator: Estimator,
    pub bootstrap_replications: usize,
    pub seed: u64,
    pub leave_one_out: bool,
    pub tau2_ci: Vec<Tau2Ci>,
    pub profile_steps: usize,
}

pub fn pool(effects: &Path, options: &PoolOptions, out: &Path) -> Result<PooledArtifact> {
    let input: EffectsArtifact = read_json(effects)?;
    let e = &input.studies;
    let pooled = pool_random_effects(e, options.estimator)?;
    let multi = e.len() >= 2;
    let heterogeneity = multi.then(|| heterogeneity_stats(e, options.estimator)).transpose()?;
    let qprofile = (multi && options.tau2_ci.contains(&Tau2Ci::Qprofile))
        .then(|| tau2_ci_qprofile(e, 0.95))
        .transpose()?;
    let profile = (multi && options.tau2_ci.contains(&Tau2Ci::Profile))
        .then(|| tau2_ci_profile_likelihood(e, options.profile_steps, 0.95))
        .transpose()?;
    let loo = (options.leave_one_out && e.len() >= 3)
        .then(|| leave_one_out(e, options.estimator))
        .transpose()?;
    let bootstrap = (options.bootstrap_replications > 0 && multi)
        .then(|| {
            let mut b = BootstrapOptions::new(options.bootstrap_replications, options.seed);
            b.estimator = options.estimator;
            bootstrap_pool(e, b)
        })
        .transpose()?;
    let mut prov = provenance(Some(options.seed), &[effects])?;
    prov.merge(&input.provenance);
    let artifact = PooledArtifact {
        provenance: prov,
        pooled,
        effects: input.studies.clone(),
        heterogeneity,
        qprofile,
        profile,
        leave_one_out: loo,
        bootstrap,
        control_counts: (input.control_total > 0).then_some((input.control_events, input.control_total)),
    };
    write_json(out, &artifact)?;
    Ok(artifact)
}

pub fn bias(effects: &Path, seed: Option<u64>, out: &Path, svg: Option<&Path>) -> Result<BiasArtifact> {
    let input: EffectsArtifact = read_json(effects)?;
    let plot = doi_plot(&input.studies)?;
    let lfk = lfk_index(&plot);
    let mut prov = provenance(seed, &[effects])?;
    prov.merge(&input.provenance);
    let artifact = BiasArtifact {
        provenance: prov,
        plot,
        lfk,
    };
    write_json(out, &artifact)?;
    if let Some(svg) = svg {
        fs::write(svg, doi_svg(&artifact.plot, &artifact.lfk))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(artifact)
}

pub fn report(
    pooled: &Path,
    ledger: Option<&Path>,
    bias: Option<&Path>,
    formats: &BTreeSet<ReportFormat>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if formats.is_empty() {
        bail!("no report formats requested");
    }
    let pooled: PooledArtifact = read_json(pooled)?;
    let bias: Option<BiasArtifact> = bias.map(read_json).transpose()?;
    let ledger: Option<PrismaLedger> = ledger.map(read_json).transpose()?;
    let doc = ReportDocument::assemble(&pooled, bias.as_ref(), ledger.as_ref())?;
    Ok(render_reports(&doc, formats, out_dir)?)
}
