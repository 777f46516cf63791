//! Optimisation loop, checkpoints, evaluation and the loss comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod eval;
pub mod manifest;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_model, load_model_expecting, load_state, save_model, save_state};
pub use compare::{compare_losses, Curve, CurveBundle, CONVERGENCE_DSC};
pub use config::{LossConfig, OptimizerKind, TrainConfig};
pub use eval::{case_counts, evaluate, group_cases, predict_case, predict_stacks, Segmenter, EVAL_BATCH};
pub use manifest::RunManifest;
pub use optim::{Optimizer, OptimizerSettings};
pub use trainer::{derive_seed, train, CheckpointPlan, EpochRecord, History, TrainState};
