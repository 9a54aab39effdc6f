//! Sequential execution of the configured stages with a run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use casma_core::report::digest_file;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::stages::{self, PoolOptions};

/// Artifact file names inside the output directory.
pub mod files {
    pub const RECORDS: &str = "records.jsonl";
    pub const LEDGER_IDENTIFIED: &str = "prisma_identified.json";
    pub const DEDUPED: &str = "deduped.jsonl";
    pub const PAIRS: &str = "pairs.csv";
    pub const LEDGER_DEDUP: &str = "prisma_dedup.json";
    pub const DECISIONS: &str = "decisions.jsonl";
    pub const LEDGER: &str = "prisma.json";
    pub const IRR: &str = "irr.json";
    pub const EFFECTS: &str = "effects.json";
    pub const POOLED: &str = "pooled.json";
    pub const BIAS: &str = "bias.json";
    pub const DOI_SVG: &str = "doi.svg";
    pub const REPORTS: &str = "reports";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// File name to SHA-256 of each input read.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory to SHA-256 of each output.
    pub outputs: BTreeMap<String, String>,
    /// Number of items the stage produced (records, decisions, studies...).
    pub items: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub started_at: String,
    pub config_digest: Option<String>,
    pub stages: Vec<StageRecord>,
}

fn digests(paths: &[PathBuf], relative_to: Option<&Path>) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let key = match relative_to.and_then(|base| p.strip_prefix(base).ok()) {
            Some(rel) => rel.to_string_lossy().replace('\\', "/"),
            None => p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        out.insert(key, digest_file(p).with_context(|| format!("hashing {}", p.display()))?);
    }
    Ok(out)
}

/// Run the selected stages in dependency order. Validation happens before
/// anything is written.
pub fn run_pipeline(config: &PipelineConfig, config_path: Option<&Path>) -> Result<RunManifest> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let at = |name: &str| out.join(name);
    let seed = config.seed;

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config_digest: config_path.map(digest_file).transpose()?,
        stages: Vec::new(),
    };

    for stage in config.selected_stages() {
        let start = Instant::now();
        let (inputs, outputs, items): (Vec<PathBuf>, Vec<PathBuf>, usize) = match stage {
            Stage::Harvest => {
                let mut harvested = Vec::new();
                for q in &config.harvest.remote {
                    let mut settings = q
                        .settings
                        .clone()
                        .unwrap_or_else(|| casma_core::ingest::remote::SourceConfig::for_source(q.source, &q.contact));
                    if settings.contact.is_empty() {
                        settings.contact = q.contact.clone();
                    }
                    harvested.extend(stages::harvest_remote(q.source, &q.query, settings, q.max_pages)?);
                }
                let n = stages::identify(
                    &config.harvest.imports,
                    harvested,
                    &at(files::RECORDS),
                    &at(files::LEDGER_IDENTIFIED),
                )?;
                (
                    config.harvest.imports.clone(),
                    vec![at(files::RECORDS), at(files::LEDGER_IDENTIFIED)],
                    n,
                )
            }
            Stage::Dedup => {
                let s = stages::dedup(
                    &at(files::RECORDS),
                    config.dedup.threshold,
                    &at(files::PAIRS),
                    &at(files::DEDUPED),
                    Some(&at(files::LEDGER_IDENTIFIED)),
                    Some(&at(files::LEDGER_DEDUP)),
                )?;
                (
                    vec![at(files::RECORDS), at(files::LEDGER_IDENTIFIED)],
                    vec![at(files::DEDUPED), at(files::PAIRS), at(files::LEDGER_DEDUP)],
                    s.kept,
                )
            }
            Stage::Screen => {
                let n = stages::screen(
                    &config.screen.rules,
                    &at(files::DEDUPED),
                    &at(files::DECISIONS),
                    Some(&at(files::LEDGER_DEDUP)),
                    &at(files::LEDGER),
                )?;
                (
                    vec![config.screen.rules.clone(), at(files::DEDUPED), at(files::LEDGER_DEDUP)],
                    vec![at(files::DECISIONS), at(files::LEDGER)],
                    n,
                )
            }
            Stage::Grading => {
                let a = stages::irr(&config.grading.grades, config.grading.replications, seed, &at(files::IRR))?;
                (vec![config.grading.grades.clone()], vec![at(files::IRR)], a.kappa.n_items)
            }
            Stage::Extract => {
                let a = stages::extract(&config.extract.trials, config.extract.correction, Some(seed), &at(files::EFFECTS))?;
                (vec![config.extract.trials.clone()], vec![at(files::EFFECTS)], a.studies.len())
            }
            Stage::Pool => {
                let p = &config.pool;
                let options = PoolOptions {
                    estimator: p.estimator,
                    bootstrap_replications: p.bootstrap_replications,
                    seed,
                    leave_one_out: p.leave_one_out,
                    tau2_ci: p.tau2_ci.clone(),
                    profile_steps: p.profile_steps,
                };
                let a = stages::pool(&at(files::EFFECTS), &options, &at(files::POOLED))?;
                (vec![at(files::EFFECTS)], vec![at(files::POOLED)], a.pooled.k)
            }
            Stage::Bias => {
                let a = stages::bias(&at(files::EFFECTS), Some(seed), &at(files::BIAS), Some(&at(files::DOI_SVG)))?;
                (vec![at(files::EFFECTS)], vec![at(files::BIAS), at(files::DOI_SVG)], a.plot.points.len())
            }
            Stage::Report => {
                let formats: BTreeSet<_> = config.report.formats.iter().copied().collect();
                let ledger = at(files::LEDGER);
                let bias = at(files::BIAS);
                let written = stages::report(
                    &at(files::POOLED),
                    ledger.is_file().then_some(ledger.as_path()),
                    bias.is_file().then_some(bias.as_path()),
                    &formats,
                    &at(files::REPORTS),
                )?;
                let mut inputs = vec![at(files::POOLED)];
                inputs.extend([ledger, bias].into_iter().filter(|p| p.is_file()));
                let n = written.len();
                (inputs, written, n)
            }
        };
        manifest.stages.push(StageRecord {
            stage,
            inputs: digests(&inputs, Some(out))?,
            outputs: digests(&outputs, Some(out))?,
            items,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    stages::write_json(&at(files::MANIFEST), &manifest)?;
    Ok(manifest)
}
