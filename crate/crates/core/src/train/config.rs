use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Variant};
use crate::data::AugmentParams;
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Gradient descent with classical momentum.
    Sgd,
    Adam,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}
fn default_lr() -> f64 {
    1e-6
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epochs() -> usize {
    150
}
fn default_loss() -> LossKind {
    LossKind::Eml
}
fn yes() -> bool {
    true
}

/// The `[loss]` section: objective plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub log_of_dice_loss: bool,
}

fn default_alpha() -> f64 {
    LossParams::default().alpha
}
fn default_gamma() -> f64 {
    LossParams::default().gamma
}
fn default_delta() -> f64 {
    LossParams::default().delta
}
fn default_eps() -> f64 {
    LossParams::default().eps
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::new(default_loss(), LossParams::default())
    }
}

impl LossConfig {
    pub fn new(loss: LossKind, p: LossParams) -> Self {
        LossConfig {
            loss,
            alpha: p.alpha,
            gamma: p.gamma,
            delta: p.delta,
            eps: p.eps,
            log_of_dice_loss: p.log_of_dice_loss,
        }
    }

    pub fn params(&self) -> LossParams {
        LossParams {
            alpha: self.alpha,
            gamma: self.gamma,
            delta: self.delta,
            eps: self.eps,
            log_of_dice_loss: self.log_of_dice_loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Momentum for SGD, first-moment decay for Adam.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Second-moment decay for Adam.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to 36, or 6 for the volumetric baseline.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub augment: bool,
    #[serde(default)]
    pub augmentation: AugmentParams,
    /// Write a checkpoint every this many epochs (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Leaves every parameter and running statistic untouched.
    #[serde(default)]
    pub freeze: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: default_optimizer(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            beta2: default_beta2(),
            epochs: default_epochs(),
            batch_size: None,
            seed: 0,
            augment: true,
            augmentation: AugmentParams::default(),
            checkpoint_every: 0,
            freeze: false,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, spec: &ArchSpec) -> usize {
        self.batch_size.unwrap_or(match spec.variant {
            Variant::Unet3dTransform => 6,
            _ => 36,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 || (self.learning_rate == 0.0 && !self.freeze) {
            return bad(format!(
                "learning rate {} must be positive (set freeze = true to train without updates)",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return bad("momentum and beta2 must lie in [0, 1)".into());
        }
        self.augmentation.validate()
    }
}
