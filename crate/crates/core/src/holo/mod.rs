//! Hologram optimization: image loss, adjoint gradients, Adam, and the
//! single-color and multi-color optimizers.

mod adam;
mod config;
mod optimize;
mod power;
mod problem;
mod scene;

pub use adam::{adam_step, Adam, AdamState};
pub use config::{lr_schedule, OptimizationConfig};
pub(crate) use config::linear_decay;
pub use optimize::{
    optimize_multicolor, optimize_single_color, optimize_with, phase_hash, initial_phases,
    OptimizationResult, PowerInit, RunOptions, Snapshot,
};
pub use power::LaserPowerMatrix;
pub use problem::{image_loss, loss_gradients, HologramProblem, LossGradients};
pub use scene::TargetScene;
