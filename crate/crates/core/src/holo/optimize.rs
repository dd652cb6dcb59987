use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::adam::{Adam, AdamState};
use super::config::lr_schedule;
use super::problem::{powers_as, HologramProblem};
use super::{LaserPowerMatrix, OptimizationConfig, TargetScene};
use crate::optics::{raw, PhaseHologramSet};
use crate::{Error, Real, Result};

/// Starting point for the power matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum PowerInit {
    /// Every entry set to `min(scale / F, 1)`.
    Uniform,
    Given(LaserPowerMatrix),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep powers at their initial value (single-color baseline).
    pub freeze_powers: bool,
    /// Record parameters after these many updates.
    pub snapshot_steps: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Snapshot<T: Real = f32> {
    pub step: usize,
    pub phases: Array3<T>,
    pub powers: LaserPowerMatrix,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult<T: Real = f32> {
    pub holograms: PhaseHologramSet<T>,
    pub powers: LaserPowerMatrix,
    pub initial_powers: LaserPowerMatrix,
    /// `history[i]` is the loss after `i + 1` updates.
    pub history: Vec<f64>,
    pub initial_loss: f64,
    /// SHA-256 of the step-0 phase state, as little-endian f32.
    pub initial_phase_hash: String,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T: Real> OptimizationResult<T> {
    pub fn final_loss(&self) -> f64 {
        *self.history.last().expect("at least one step")
    }

    /// Loss after `step` updates (`step >= 1`).
    pub fn loss_at(&self, step: usize) -> Option<f64> {
        step.checked_sub(1).and_then(|i| self.history.get(i)).copied()
    }

    /// Best loss seen up to and including each step.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = self.initial_loss;
        self.history
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }

    /// Write `phases.f32` (+ sidecar), `powers.json`, `history.json` and `config.json`.
    pub fn save(&self, dir: &Path, config: &OptimizationConfig, pitch: f64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        raw::save_phases(&dir.join("phases.f32"), self.holograms.phases(), pitch)?;
        write_json(&dir.join("powers.json"), &self.powers)?;
        write_json(&dir.join("history.json"), &self.history)?;
        write_json(&dir.join("config.json"), config)
    }
}

pub(crate) fn write_json<S: serde::Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Uniform phases in `[-pi, pi)`, drawn in row-major order from the seed.
pub fn initial_phases<T: Real>(seed: u64, subframes: usize, height: usize, width: usize) -> Array3<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((subframes, height, width), || T::from_f64_lossy(rng.random_range(-PI..PI)))
}

pub fn phase_hash<T: Real>(phases: &Array3<T>) -> String {
    let mut hasher = Sha256::new();
    for p in phases.iter() {
        hasher.update((p.as_f64() as f32).to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Generic optimizer loop behind both public entry points.
pub fn optimize_with<T: Real>(
    scene: &TargetScene,
    wavelengths: &[f64],
    config: &OptimizationConfig,
    init: &PowerInit,
    options: &RunOptions,
) -> Result<OptimizationResult<T>> {
    config.validate()?;
    let f_count = config.subframes;
    let (h, w) = scene.dim();
    let initial_powers = match init {
        PowerInit::Uniform => LaserPowerMatrix::uniform(f_count, wavelengths.len(), (config.scale / f_count as f64).min(1.0))?,
        PowerInit::Given(m) => {
            if m.subframes() != f_count || m.primaries() != wavelengths.len() {
                return Err(Error::DimensionMismatch(format!(
                    "initial powers {}x{}, expected {}x{}",
                    m.subframes(),
                    m.primaries(),
                    f_count,
                    wavelengths.len()
                )));
            }
            m.check_range()?;
            m.clone()
        }
    };

    let problem = HologramProblem::<T>::new(scene, wavelengths, config.anchor_wavelength, config.scale, f_count)?;
    let mut phases = initial_phases::<T>(config.seed, f_count, h, w);
    let initial_phase_hash = phase_hash(&phases);
    let mut powers: Array2<T> = powers_as(&initial_powers);
    let adam = Adam { beta1: config.beta1, beta2: config.beta2, eps: config.eps };
    let mut phase_state = AdamState::new(phases.len());
    let mut power_state = AdamState::new(powers.len());
    let power_grads = !options.freeze_powers;

    let mut grads = problem.loss_and_gradients(&phases, &powers, power_grads)?;
    let initial_loss = grads.loss;
    check_finite(0, initial_loss)?;

    let mut history = Vec::with_capacity(config.steps);
    let mut snapshots = Vec::new();
    for i in 0..config.steps {
        let lr = lr_schedule(i, config)?;
        adam.step(
            phases.as_slice_mut().expect("standard layout"),
            grads.phases.as_slice().expect("standard layout"),
            &mut phase_state,
            lr,
        )?;
        if power_grads {
            adam.step(
                powers.as_slice_mut().expect("standard layout"),
                grads.powers.as_slice().expect("standard layout"),
                &mut power_state,
                lr,
            )?;
            powers.mapv_inplace(|v| v.max(T::zero()).min(T::one()));
        }
        let done = i + 1 == config.steps;
        let loss = if done {
            problem.loss(&phases, &powers)?
        } else {
            grads = problem.loss_and_gradients(&phases, &powers, power_grads)?;
            grads.loss
        };
        check_finite(i + 1, loss)?;
        history.push(loss);
        if options.snapshot_steps.contains(&(i + 1)) {
            snapshots.push(Snapshot { step: i + 1, phases: phases.clone(), powers: to_matrix(&powers)? });
        }
    }

    Ok(OptimizationResult {
        holograms: PhaseHologramSet::new(phases, config.anchor_wavelength)?,
        powers: to_matrix(&powers)?,
        initial_powers,
        history,
        initial_loss,
        initial_phase_hash,
        snapshots,
    })
}

fn to_matrix<T: Real>(powers: &Array2<T>) -> Result<LaserPowerMatrix> {
    LaserPowerMatrix::new(powers.mapv(|v| v.as_f64()))
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        log::error!("optimization diverged: loss {loss} at step {step}");
        Err(Error::NonFinite { step, loss })
    }
}

/// Joint Adam descent on subframe phases and the power matrix, powers clamped to `[0, 1]`.
pub fn optimize_multicolor(
    scene: &TargetScene,
    wavelengths: &[f64],
    config: &OptimizationConfig,
    init: &PowerInit,
) -> Result<OptimizationResult> {
    optimize_with::<f32>(scene, wavelengths, config, init, &RunOptions::default())
}

/// Field-sequential baseline: one primary per subframe at full power, phases only.
pub fn optimize_single_color(scene: &TargetScene, wavelengths: &[f64], config: &OptimizationConfig) -> Result<OptimizationResult> {
    if config.subframes != wavelengths.len() {
        return Err(Error::InvalidConfig(format!(
            "single-color needs one subframe per primary, got {} subframes for {} primaries",
            config.subframes,
            wavelengths.len()
        )));
    }
    let init = PowerInit::Given(LaserPowerMatrix::identity(wavelengths.len()));
    let options = RunOptions { freeze_powers: true, ..Default::default() };
    optimize_with::<f32>(scene, wavelengths, config, &init, &options)
}
