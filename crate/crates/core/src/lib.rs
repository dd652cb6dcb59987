//! Multi-color computer-generated holography.
//!
//! The crate is organised bottom-up:
//!
//! - [`optics`]: complex wavefields, band-limited angular-spectrum propagation,
//!   the wavelength-scaled phase lift and the export-time linear grating.
//! - [`holo`]: image loss, adjoint gradients, Adam and the single/multi-color
//!   hologram optimizers with co-optimized laser power matrices.
//! - [`estimator`]: a small convolutional network, trained from scratch, that
//!   predicts laser power matrices from target images.
//! - [`dataset`]: procedural RGBD targets, depth quantization and the on-disk
//!   record format for the training corpus.
//! - [`evaluate`]: PSNR/SSIM and the cold versus warm-start convergence experiment.

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod evaluate;
pub mod holo;
pub mod imageio;
pub mod optics;
mod real;

pub use error::{Error, Result};
pub use real::Real;

pub use estimator::{EstimatorModel, Tensor4, TrainingConfig};
pub use holo::{LaserPowerMatrix, OptimizationConfig, TargetScene};
pub use optics::{ComplexField, PhaseHologramSet, TransferFunction};

/// Default primaries in meters (blue, green, red).
pub const DEFAULT_WAVELENGTHS: [f64; 3] = [473e-9, 515e-9, 639e-9];
/// Wavelength the SLM phase calibration assumes.
pub const DEFAULT_ANCHOR_WAVELENGTH: f64 = 515e-9;
/// SLM pixel pitch in meters.
pub const DEFAULT_PITCH: f64 = 8e-6;
/// Target planes relative to the hologram plane, near to far.
pub const DEFAULT_PLANE_DISTANCES: [f64; 3] = [-0.005, 0.0, 0.005];
/// Brightness multiplier the multi-color pipeline targets.
pub const DEFAULT_SCALE: f64 = 1.8;
