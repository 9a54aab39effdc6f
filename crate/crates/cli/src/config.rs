//! Pipeline configuration file.
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a config and its inputs can be moved together.

use std::path::{Path, PathBuf};

use casma_core::effects::CorrectionPolicy;
use casma_core::ingest::remote::{RemoteSource, SourceConfig};
use casma_core::meta::Estimator;
use casma_core::report::ReportFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config {path} is invalid: {message}")]
    Schema { path: String, message: String },
    #[error("{role} file not found: {path}")]
    MissingFile { role: String, path: String },
    #[error("{0}")]
    Invalid(String),
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Harvest,
    Dedup,
    Screen,
    Grading,
    Extract,
    Pool,
    Bias,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Harvest,
        Stage::Dedup,
        Stage::Screen,
        Stage::Grading,
        Stage::Extract,
        Stage::Pool,
        Stage::Bias,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Harvest => "harvest",
            Stage::Dedup => "dedup",
            Stage::Screen => "screen",
            Stage::Grading => "grading",
            Stage::Extract => "extract",
            Stage::Pool => "pool",
            Stage::Bias => "bias",
            Stage::Report => "report",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ConfigError::Invalid(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteQuery {
    pub source: RemoteSource,
    pub query: String,
    #[serde(default)]
    pub max_pages: Option<usize>,
    #[serde(default)]
    pub contact: String,
    /// Overrides for the source defaults (base URL, delay, page size...).
    #[serde(default)]
    pub settings: Option<SourceConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestConfig {
    /// Local CSV or JSONL exports.
    #[serde(default)]
    pub imports: Vec<PathBuf>,
    #[serde(default)]
    pub remote: Vec<RemoteQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupConfig {
    #[serde(default = "default_threshold")]
    pub threshold: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            threshold: default_threshold(),
        }
    }
}

fn default_threshold() -> usize {
    casma_core::dedup::DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenConfig {
    pub rules: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingConfig {
    pub grades: PathBuf,
    #[serde(default = "default_kappa_reps")]
    pub replications: usize,
}

fn default_kappa_reps() -> usize {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub trials: PathBuf,
    #[serde(default)]
    pub correction: CorrectionPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tau2Ci {
    Qprofile,
    Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_boot")]
    pub bootstrap_replications: usize,
    #[serde(default = "yes")]
    pub leave_one_out: bool,
    #[serde(default = "default_tau2_ci")]
    pub tau2_ci: Vec<Tau2Ci>,
    #[serde(default = "default_steps")]
    pub profile_steps: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            estimator: Estimator::default(),
            bootstrap_replications: default_boot(),
            leave_one_out: true,
            tau2_ci: default_tau2_ci(),
            profile_steps: default_steps(),
        }
    }
}

fn default_boot() -> usize {
    10_000
}

fn yes() -> bool {
    true
}

fn default_tau2_ci() -> Vec<Tau2Ci> {
    vec![Tau2Ci::Qprofile, Tau2Ci::Profile]
}

fn default_steps() -> usize {
    casma_core::meta::DEFAULT_PROFILE_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Svg, ReportFormat::Markdown]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed, used by every resampling stage and recorded in every
    /// JSON artifact.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Stages to execute; all eight when omitted.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub harvest: HarvestConfig,
    #[serde(default)]
    pub dedup: DedupConfig,
    pub screen: ScreenConfig,
    pub grading: GradingConfig,
    pub extract: ExtractConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl PipelineConfig {
    /// Parse and resolve relative paths against `base`.
    pub fn from_json(text: &str, base: &Path, label: &str) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Schema {
                path: label.to_string(),
                message: e.to_string(),
            })?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        cfg.harvest.imports.iter_mut().for_each(resolve);
        resolve(&mut cfg.screen.rules);
        resolve(&mut cfg.grading.grades);
        resolve(&mut cfg.extract.trials);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base, &path.display().to_string())
    }

    pub fn selected_stages(&self) -> Vec<Stage> {
        let mut stages = self.stages.clone().unwrap_or_else(|| Stage::ALL.to_vec());
        stages.sort();
        stages.dedup();
        stages
    }

    /// Check everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let stages = self.selected_stages();
        if stages.is_empty() {
            return Err(ConfigError::Invalid("no stages selected".into()));
        }
        let need = |role: &str, p: &Path| -> Result<(), ConfigError> {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::MissingFile {
                    role: role.to_string(),
                    path: p.display().to_string(),
                })
            }
        };
        if stages.contains(&Stage::Harvest) {
            if self.harvest.imports.is_empty() && self.harvest.remote.is_empty() {
                return Err(ConfigError::Invalid(
                    "harvest needs at least one import file or remote query".into(),
                ));
            }
            for p in &self.harvest.imports {
                need("import", p)?;
            }
            for q in &self.harvest.remote {
                if q.query.trim().is_empty() {
                    return Err(ConfigError::Invalid("remote query is empty".into()));
                }
            }
        }
        if stages.contains(&Stage::Dedup) && self.dedup.threshold < 1 {
            return Err(ConfigError::Invalid("dedup threshold must be at least 1".into()));
        }
        if stages.contains(&Stage::Screen) {
            need("rule", &self.screen.rules)?;
            casma_core::screen::compile_ruleset(&self.screen.rules)
                .map_err(|e| ConfigError::Invalid(format!("rule file: {e}")))?;
        }
        if stages.contains(&Stage::Grading) {
            need("grades", &self.grading.grades)?;
            if self.grading.replications < casma_core::bootstrap::MIN_REPLICATES {
                return Err(ConfigError::Invalid(format!(
                    "grading replications must be at least {}",
                    casma_core::bootstrap::MIN_REPLICATES
                )));
            }
        }
        if stages.contains(&Stage::Extract) {
            need("trials", &self.extract.trials)?;
        }
        if stages.contains(&Stage::Pool) {
            let r = self.pool.bootstrap_replications;
            if r != 0 && r < casma_core::bootstrap::MIN_REPLICATES {
                return Err(ConfigError::Invalid(format!(
                    "bootstrap_replications must be 0 (off) or at least {}",
                    casma_core::bootstrap::MIN_REPLICATES
                )));
            }
        }
        if stages.contains(&Stage::Report) && self.report.formats.is_empty() {
            return Err(ConfigError::Invalid("report needs at least one format".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 1,
        "output_dir": "out",
        "screen": {"rules": "rules.json"},
        "grading": {"grades": "grades.csv"},
        "extract": {"trials": "trials.csv"}
    }"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = PipelineConfig::from_json(MINIMAL, Path::new("/data"), "t").unwrap();
        assert_eq!(cfg.output_dir, Path::new("/data/out"));
        assert_eq!(cfg.screen.rules, Path::new("/data/rules.json"));
        assert_eq!(cfg.dedup.threshold, 5);
        assert_eq!(cfg.pool.bootstrap_replications, 10_000);
        assert_eq!(cfg.selected_stages(), Stage::ALL.to_vec());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"seed\": 1,", "\"seed\": 1, \"sed\": 2,");
        assert!(matches!(
            PipelineConfig::from_json(&text, Path::new("."), "t"),
            Err(ConfigError::Schema { .. })
        ));
    }

    #[test]
    fn missing_rule_file_fails_validation() {
        let cfg = PipelineConfig::from_json(MINIMAL, Path::new("/nonexistent"), "t").unwrap();
        let mut only_screen = cfg.clone();
        only_screen.stages = Some(vec![Stage::Screen]);
        match only_screen.validate() {
            Err(ConfigError::MissingFile { role, .. }) => assert_eq!(role, "rule"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stage_names_parse() {
        assert_eq!("Pool".parse::<Stage>().unwrap(), Stage::Pool);
        assert!("publish".parse::<Stage>().is_err());
    }
}
