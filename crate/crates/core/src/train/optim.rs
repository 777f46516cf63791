use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};

const ADAM_EPS: f64 = 1e-7;

/// Per-parameter moment buffers, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Slots {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta2: f64,
}

impl From<&TrainConfig> for OptimizerSettings {
    fn from(c: &TrainConfig) -> Self {
        OptimizerSettings {
            kind: c.optimizer,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            beta2: c.beta2,
        }
    }
}

/// Momentum SGD (`v ← m·v − lr·g; w ← w + v`) or Adam with bias
/// correction. No weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub settings: OptimizerSettings,
    pub step: u64,
    pub slots: BTreeMap<String, Slots>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Applies one update to every trainable parameter. Parameters the
    /// gradient pass did not reach count as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let s = self.settings;
        let (lr, m, b2) = (s.learning_rate, s.momentum, s.beta2);
        let (c1, c2) = (1.0 - m.powf(self.step as f64), 1.0 - b2.powf(self.step as f64));
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.param(id);
            if let Some(g) = g {
                if g.len() != p.data.len() {
                    return Err(Error::ShapeMismatch(format!("gradient for {}", p.name)));
                }
            }
            let slot = self.slots.entry(p.name.clone()).or_insert_with(|| Slots {
                first: vec![0.0; p.data.len()],
                second: if s.kind == OptimizerKind::Adam {
                    vec![0.0; p.data.len()]
                } else {
                    Vec::new()
                },
            });
            let grad_at = |i: usize| g.map_or(0.0, |g| g[i] as f64);
            match s.kind {
                OptimizerKind::Sgd => {
                    for (i, (w, v)) in p.data.iter_mut().zip(slot.first.iter_mut()).enumerate() {
                        let nv = m * *v as f64 - lr * grad_at(i);
                        *v = nv as f32;
                        *w = (*w as f64 + nv) as f32;
                    }
                }
                OptimizerKind::Adam => {
                    for (i, w) in p.data.iter_mut().enumerate() {
                        let gi = grad_at(i);
                        let mi = m * slot.first[i] as f64 + (1.0 - m) * gi;
                        let vi = b2 * slot.second[i] as f64 + (1.0 - b2) * gi * gi;
                        slot.first[i] = mi as f32;
                        slot.second[i] = vi as f32;
                        let upd = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                        *w = (*w as f64 - upd) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
