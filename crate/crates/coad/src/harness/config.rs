//! The experiment configuration: one human-editable TOML file covering
//! world, detector, fusion, decoding, sources, and metric selection.

use crate::decode::{DecodePolicy, SourceTag};
use crate::error::{CoadError, Result};
use crate::fusion::FusionConfig;
use crate::metrics::PopeSplit;
use crate::world::{DetectorConfig, WorldConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which metrics a run computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSelect {
    #[serde(default = "default_true")]
    pub chair: bool,
    #[serde(default)]
    pub pope: Option<PopeSelect>,
    #[serde(default)]
    pub divergence: Option<DivergenceSelect>,
}

impl Default for MetricsSelect {
    fn default() -> Self {
        MetricsSelect {
            chair: true,
            pope: None,
            divergence: None,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Probe-metric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopeSelect {
    pub split: PopeSplit,
    /// Positive and negative probes per scene.
    pub k_per_scene: usize,
}

/// Divergence-metric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSelect {
    /// Number of oracle-rollout contexts to average over.
    #[serde(default = "default_contexts")]
    pub contexts: usize,
}

fn default_contexts() -> usize {
    256
}

/// Full description of one experiment; a run is a pure function of this
/// config including its master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub decode: DecodePolicy,
    pub n_scenes: usize,
    pub sources: Vec<SourceTag>,
    #[serde(default)]
    pub metrics: MetricsSelect,
    /// Dump every fused per-token distribution into the run record for
    /// audit. Intended for small runs; the record grows accordingly.
    #[serde(default)]
    pub dump_fused_dists: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CoadError::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoadError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoadError::Config(format!("serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(CoadError::Config("n_scenes must be >= 1".into()));
        }
        if self.sources.is_empty() {
            return Err(CoadError::Config("sources must be nonempty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for tag in &self.sources {
            if !seen.insert(*tag) {
                return Err(CoadError::Config(format!("duplicate source: {tag}")));
            }
        }
        self.world.validate()?;
        self.detector.validate(self.world.categories)?;
        self.fusion.validate(self.world.categories)?;
        self.decode.validate()?;
        if let Some(pope) = &self.metrics.pope {
            if pope.k_per_scene == 0 {
                return Err(CoadError::Config("pope k_per_scene must be >= 1".into()));
            }
        }
        if let Some(div) = &self.metrics.divergence {
            if div.contexts == 0 {
                return Err(CoadError::Config("divergence contexts must be >= 1".into()));
            }
        }
        Ok(())
    }
}
