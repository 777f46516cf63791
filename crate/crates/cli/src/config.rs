use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dunet_core::data::{Preprocess, SplitSpec};
use dunet_core::train::{LossConfig, TrainConfig, EVAL_BATCH};
use dunet_core::{ArchSpec, Preset};
use serde::{Deserialize, Serialize};

fn default_store() -> PathBuf {
    PathBuf::from("store")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Prepared stack store.
    #[serde(default = "default_store")]
    pub store: PathBuf,
    /// Case split of the store into training and validation.
    #[serde(default)]
    pub split: SplitSpec,
    /// Slice preprocessing used by `prepare` and `predict`.
    #[serde(default)]
    pub preprocess: Preprocess,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            store: default_store(),
            split: SplitSpec::default(),
            preprocess: Preprocess::default(),
        }
    }
}

fn default_preset() -> String {
    Preset::SeAdd23.name().into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    /// Variant name as accepted by `count-params --arch`.
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Overrides the width of the first block; deeper blocks scale with it.
    #[serde(default)]
    pub base_filters: Option<usize>,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            preset: default_preset(),
            base_filters: None,
        }
    }
}

impl ArchSection {
    /// Spec at the given input resolution.
    pub fn spec(&self, size: usize) -> Result<ArchSpec> {
        let preset: Preset = self.preset.parse()?;
        let mut spec = preset.spec().with_resolution(size);
        if let Some(b) = self.base_filters {
            spec = spec.with_base_filters(b);
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn default_eval_batch() -> usize {
    EVAL_BATCH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            batch_size: default_eval_batch(),
        }
    }
}

/// The run configuration file, sections `data`, `arch`, `loss`, `train`,
/// `eval`; every key is optional and unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Loads `path` or falls back to defaults; `seed` overrides the
    /// training seed.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        cfg.train.validate()?;
        cfg.loss.params().validate()?;
        Ok(cfg)
    }
}
