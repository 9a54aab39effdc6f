//! Serializable stage outputs passed between pipeline steps.
//!
//! Artifacts carry no wall-clock timestamps so that identical inputs and
//! seeds produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{BootstrapKappa, KappaResult};
use crate::bias::{DoiPlot, LfkResult};
use crate::effects::EffectEstimate;
use crate::meta::{
    BootstrapSummary, Heterogeneity, LooEntry, PooledResult, ProfileLikelihood, Tau2Interval,
};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input label to lowercase hex SHA-256.
    #[serde(default)]
    pub input_digests: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            input_digests: BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, label: impl Into<String>, digest: impl Into<String>) -> Self {
        self.input_digests.insert(label.into(), digest.into());
        self
    }

    /// Fold in another artifact's inputs. The seed is kept if already set.
    pub fn merge(&mut self, other: &Provenance) {
        if self.seed.is_none() {
            self.seed = other.seed;
        }
        for (k, v) in &other.input_digests {
            self.input_digests.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsArtifact {
    pub provenance: Provenance,
    pub studies: Vec<EffectEstimate>,
    /// Summed control-arm events and totals, used for absolute effects.
    pub control_events: u64,
    pub control_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledArtifact {
    pub provenance: Provenance,
    pub pooled: PooledResult,
    pub effects: Vec<EffectEstimate>,
    pub heterogeneity: Option<Heterogeneity>,
    pub qprofile: Option<Tau2Interval>,
    pub profile: Option<ProfileLikelihood>,
    pub leave_one_out: Option<Vec<LooEntry>>,
    pub bootstrap: Option<BootstrapSummary>,
    pub control_counts: Option<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasArtifact {
    pub provenance: Provenance,
    pub plot: DoiPlot,
    pub lfk: LfkResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrArtifact {
    pub provenance: Provenance,
    pub kappa: KappaResult,
    pub bootstrap: Option<BootstrapKappa>,
}
