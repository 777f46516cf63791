use serde::{Deserialize, Serialize};

use super::config::{LossConfig, TrainConfig};
use crate::arch::ArchSpec;

/// Every effective setting of a run, defaults materialised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub spec: ArchSpec,
    pub spec_hash: String,
    pub parameters: usize,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Command-specific inputs and outputs.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, spec: &ArchSpec, parameters: usize, train: &TrainConfig, loss: &LossConfig) -> Self {
        let mut train = train.clone();
        train.batch_size = Some(train.batch_size_for(spec));
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: train.seed,
            spec: spec.clone(),
            spec_hash: spec.content_hash(),
            parameters,
            train,
            loss: *loss,
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }
}
