use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_ratio() -> f64 {
    0.8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_ratio")]
    pub train_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_ratio: default_ratio(),
            seed: 0,
        }
    }
}

/// Case-level partition into `(train, validation)`, each sorted.
///
/// The training share is `round(ratio · n)`, kept within `1..n` so neither
/// side is empty.
pub fn split_dataset(ids: &[String], spec: &SplitSpec) -> Result<(Vec<String>, Vec<String>)> {
    if !(spec.train_ratio > 0.0 && spec.train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("train ratio {} outside (0, 1)", spec.train_ratio)));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::InvalidArgument("duplicate case ids".into()));
    }
    let n = sorted.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 cases to split, got {n}")));
    }
    let n_train = ((spec.train_ratio * n as f64).round() as usize).clamp(1, n - 1);
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut val = sorted.split_off(n_train);
    sorted.sort();
    val.sort();
    Ok((sorted, val))
}
