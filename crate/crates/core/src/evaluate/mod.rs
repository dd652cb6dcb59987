//! Image metrics and the cold versus warm-start convergence experiment.

mod experiment;
mod metrics;

pub use experiment::{
    run_convergence_experiment, ArmReport, CheckpointAggregate, CheckpointMetrics, ConvergenceReport, ExperimentConfig,
    TargetReport,
};
pub use metrics::{psnr, ssim, ssim_channel, PSNR_CAP_DB};
