use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Channel index of the target slice inside a four-slice input stack.
pub const TARGET_CHANNEL: usize = 2;

/// Slices per input stack.
pub const STACK_DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 64 base filters, no batch normalisation.
    Unet2dOriginal,
    /// 32 base filters, batch normalisation after every hidden convolution.
    Unet2dTransform,
    /// Fully volumetric encoder/decoder with a planar output head.
    Unet3dTransform,
    /// Planar encoder/decoder with a volumetric side branch fused in.
    Dunet,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet2dOriginal => "unet2d_original",
            Variant::Unet2dTransform => "unet2d_transform",
            Variant::Unet3dTransform => "unet3d_transform",
            Variant::Dunet => "dunet",
        }
    }
}

fn default_se_reduction() -> usize {
    16
}
fn default_base_filters() -> usize {
    32
}
fn default_dropout() -> f64 {
    0.5
}
fn default_input_shape() -> [usize; 3] {
    [192, 192, STACK_DEPTH]
}
fn default_bn_epsilon() -> f64 {
    1e-3
}
fn default_bn_momentum() -> f64 {
    0.99
}

/// Declarative description of one network variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub variant: Variant,
    /// Encoder stages (1-based) where the volumetric branch is fused in.
    #[serde(default)]
    pub fusion_stages: BTreeSet<u8>,
    #[serde(default)]
    pub use_se: bool,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default = "default_base_filters")]
    pub base_filters: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    /// `[height, width, channels]`; channels is 4 for a slice stack or 1 for
    /// networks that only see the target slice.
    #[serde(default = "default_input_shape")]
    pub input_shape: [usize; 3],
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

impl ArchSpec {
    pub fn dunet(stages: &[u8], use_se: bool) -> Self {
        ArchSpec {
            variant: Variant::Dunet,
            fusion_stages: stages.iter().copied().collect(),
            use_se,
            se_reduction: default_se_reduction(),
            base_filters: default_base_filters(),
            dropout_rate: default_dropout(),
            input_shape: default_input_shape(),
            bn_epsilon: default_bn_epsilon(),
            bn_momentum: default_bn_momentum(),
        }
    }

    pub fn baseline(variant: Variant) -> Self {
        let (base, channels) = match variant {
            Variant::Unet2dOriginal => (64, 1),
            Variant::Unet2dTransform => (32, 1),
            Variant::Unet3dTransform | Variant::Dunet => (32, STACK_DEPTH),
        };
        ArchSpec {
            variant,
            fusion_stages: BTreeSet::new(),
            use_se: false,
            se_reduction: default_se_reduction(),
            base_filters: base,
            dropout_rate: default_dropout(),
            input_shape: [192, 192, channels],
            bn_epsilon: default_bn_epsilon(),
            bn_momentum: default_bn_momentum(),
        }
    }

    /// Same network at another in-plane resolution.
    pub fn with_resolution(mut self, size: usize) -> Self {
        self.input_shape[0] = size;
        self.input_shape[1] = size;
        self
    }

    pub fn with_base_filters(mut self, base: usize) -> Self {
        self.base_filters = base;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.input_shape[2]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !self.fusion_stages.is_empty() && self.variant != Variant::Dunet {
            return bad(format!("fusion stages are only valid for dunet, not {}", self.variant.name()));
        }
        if let Some(s) = self.fusion_stages.iter().find(|s| !(1..=3).contains(*s)) {
            return bad(format!("fusion stage {s} outside 1..=3"));
        }
        if self.use_se && self.variant != Variant::Dunet {
            return bad("squeeze-excitation gates only exist in dunet fusion blocks".into());
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive".into());
        }
        if self.use_se && !self.base_filters.is_multiple_of(self.se_reduction) {
            return bad(format!(
                "base_filters {} not divisible by se_reduction {}",
                self.base_filters, self.se_reduction
            ));
        }
        if self.base_filters == 0 {
            return bad("base_filters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        let [h, w, c] = self.input_shape;
        if h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0 {
            return bad(format!("input {h}x{w} must be positive multiples of 16"));
        }
        match (self.variant, c) {
            (Variant::Unet2dOriginal | Variant::Unet2dTransform, 1 | STACK_DEPTH) => {}
            (Variant::Unet3dTransform | Variant::Dunet, STACK_DEPTH) => {}
            _ => return bad(format!("{} cannot take {c} input channels", self.variant.name())),
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("batch-norm epsilon must be positive and momentum in [0, 1)".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// Table-style label such as `SE-Add-23` or `2D UNet(transform)`.
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Unet2dOriginal => "2D UNet(original)".into(),
            Variant::Unet2dTransform => "2D UNet(transform)".into(),
            Variant::Unet3dTransform => "3D UNet(transform)".into(),
            Variant::Dunet => {
                let stages: String = self.fusion_stages.iter().map(|s| s.to_string()).collect();
                if self.use_se {
                    format!("SE-Add-{stages}")
                } else {
                    format!("Add-{stages}")
                }
            }
        }
    }
}

/// Named architectures of the ablation grid and the baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Unet2dOriginal,
    Unet2dTransform,
    Unet3dTransform,
    Add1,
    Add12,
    Add23,
    Add123,
    SeAdd12,
    SeAdd23,
    SeAdd123,
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Unet2dOriginal,
        Preset::Unet2dTransform,
        Preset::Unet3dTransform,
        Preset::Add1,
        Preset::Add12,
        Preset::Add23,
        Preset::Add123,
        Preset::SeAdd12,
        Preset::SeAdd23,
        Preset::SeAdd123,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Unet2dOriginal => "unet2d-original",
            Preset::Unet2dTransform => "unet2d-transform",
            Preset::Unet3dTransform => "unet3d-transform",
            Preset::Add1 => "add-1",
            Preset::Add12 => "add-12",
            Preset::Add23 => "add-23",
            Preset::Add123 => "add-123",
            Preset::SeAdd12 => "se-add-12",
            Preset::SeAdd23 => "se-add-23",
            Preset::SeAdd123 => "se-add-123",
        }
    }

    pub fn spec(self) -> ArchSpec {
        match self {
            Preset::Unet2dOriginal => ArchSpec::baseline(Variant::Unet2dOriginal),
            Preset::Unet2dTransform => ArchSpec::baseline(Variant::Unet2dTransform),
            Preset::Unet3dTransform => ArchSpec::baseline(Variant::Unet3dTransform),
            Preset::Add1 => ArchSpec::dunet(&[1], false),
            Preset::Add12 => ArchSpec::dunet(&[1, 2], false),
            Preset::Add23 => ArchSpec::dunet(&[2, 3], false),
            Preset::Add123 => ArchSpec::dunet(&[1, 2, 3], false),
            Preset::SeAdd12 => ArchSpec::dunet(&[1, 2], true),
            Preset::SeAdd23 => ArchSpec::dunet(&[2, 3], true),
            // The three-stage SE grid entry is built with a reduction ratio of 8.
            Preset::SeAdd123 => ArchSpec {
                se_reduction: 8,
                ..ArchSpec::dunet(&[1, 2, 3], true)
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        if key == "dunet" || key == "d-unet" {
            return Ok(Preset::SeAdd23);
        }
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidSpec(format!("unknown architecture '{s}' (expected one of {})", names.join(", ")))
            })
    }
}
