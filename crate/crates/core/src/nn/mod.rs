//! Minimal neural-network runtime: parameter storage, compute kernels, a
//! reverse-mode tape and the layer wrappers built on top of it.

pub mod kernels;
pub mod layers;
pub mod params;
pub mod tape;

pub use layers::{BatchNorm, Conv, Dense};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{BnRef, Gradients, Mode, StatUpdate, Tape, Var};
