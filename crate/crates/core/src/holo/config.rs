use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Settings for one hologram optimization job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Brightness multiplier applied to the target.
    pub scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub subframes: usize,
    pub anchor_wavelength: f64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr_start: 0.025,
            lr_end: 0.005,
            scale: crate::DEFAULT_SCALE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            subframes: 3,
            anchor_wavelength: crate::DEFAULT_ANCHOR_WAVELENGTH,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lr_end <= lr_start, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {}", self.scale)));
        }
        if self.subframes == 0 {
            return Err(Error::InvalidConfig("need at least one subframe".into()));
        }
        if !(self.anchor_wavelength > 0.0) {
            return Err(Error::InvalidConfig("anchor wavelength must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("invalid Adam constants".into()));
        }
        Ok(())
    }
}

/// Linear decay from `lr_start` at step 0 to `lr_end` at the final step.
pub fn lr_schedule(step: usize, config: &OptimizationConfig) -> Result<f64> {
    linear_decay(step, config.steps, config.lr_start, config.lr_end)
}

pub(crate) fn linear_decay(step: usize, steps: usize, start: f64, end: f64) -> Result<f64> {
    if step >= steps {
        return Err(Error::OutOfRange(format!("step {step} outside schedule of {steps} steps")));
    }
    if steps == 1 {
        return Ok(start);
    }
    let t = step as f64 / (steps - 1) as f64;
    Ok(start + (end - start) * t)
}
