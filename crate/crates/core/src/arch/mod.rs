//! Network variants: the fused planar/volumetric network, its fusion
//! placement grid and the planar and volumetric baselines.

pub mod blocks;
pub mod model;
pub mod spec;

pub use blocks::{ConvBlock, DimensionFusion, Rank, Reduce3d, SeGate, UpBlock};
pub use model::{Model, ParameterCounts, TraceOptions};
pub use spec::{ArchSpec, Preset, Variant, STACK_DEPTH, TARGET_CHANNEL};
