pub mod arch;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use arch::{ArchSpec, Model, Preset, Variant};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
pub use train::{evaluate, train, History, LossConfig, TrainConfig};
