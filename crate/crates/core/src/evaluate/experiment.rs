use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use crate::estimator::EstimatorModel;
use crate::holo::{optimize_with, HologramProblem, LaserPowerMatrix, OptimizationConfig, PowerInit, RunOptions, TargetScene};
use crate::imageio::save_preview_png;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Shared by both arms; `steps` must reach the last checkpoint.
    pub optimization: OptimizationConfig,
    pub wavelengths: Vec<f64>,
    pub checkpoints: Vec<usize>,
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            optimization: OptimizationConfig::default(),
            wavelengths: crate::DEFAULT_WAVELENGTHS.to_vec(),
            checkpoints: vec![70, 300],
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub initial_powers: LaserPowerMatrix,
    pub final_powers: LaserPowerMatrix,
    pub initial_loss: f64,
    /// Loss after each update.
    pub curve: Vec<f64>,
    pub checkpoints: Vec<CheckpointMetrics>,
    /// Updates needed to reach the cold arm's final loss, if ever.
    pub steps_to_threshold: Option<usize>,
    pub initial_phase_hash: String,
}

impl ArmReport {
    pub fn loss_at(&self, step: usize) -> Option<f64> {
        self.checkpoints.iter().find(|c| c.step == step).map(|c| c.loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub id: String,
    pub cold: ArmReport,
    pub warm: ArmReport,
    pub phase_init_match: bool,
    #[serde(skip)]
    pub snapshots: Vec<(String, usize, Array3<f32>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAggregate {
    pub step: usize,
    pub cold_loss: f64,
    pub warm_loss: f64,
    pub cold_psnr: f64,
    pub warm_psnr: f64,
    pub cold_ssim: f64,
    pub warm_ssim: f64,
    /// Share of targets where the warm loss is at most the cold loss.
    pub warm_not_worse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    pub targets: Vec<TargetReport>,
    pub failures: Vec<(String, String)>,
    pub aggregate: Vec<CheckpointAggregate>,
}

impl ConvergenceReport {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// `report.json`, `report.csv` and composite PNGs under `snapshots/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let snaps = dir.join("snapshots");
        let peak = self.config.optimization.scale as f32;
        for t in &self.targets {
            if t.snapshots.is_empty() {
                continue;
            }
            fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
            for (arm, step, img) in &t.snapshots {
                save_preview_png(&snaps.join(format!("{}_{arm}_{step}.png", t.id)), img, peak)?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let steps = &self.config.checkpoints;
        let mut out = String::from("id");
        for s in steps {
            let _ = write!(out, ",cold@{s},warm@{s}");
        }
        for s in steps {
            let _ = write!(out, ",psnr_cold@{s},psnr_warm@{s},ssim_cold@{s},ssim_warm@{s}");
        }
        out.push_str(",cold_steps_to_threshold,warm_steps_to_threshold\n");
        let opt = |v: Option<usize>| v.map(|s| s.to_string()).unwrap_or_default();
        for t in &self.targets {
            out.push_str(&t.id);
            for (c, w) in t.cold.checkpoints.iter().zip(&t.warm.checkpoints) {
                let _ = write!(out, ",{},{}", c.loss, w.loss);
            }
            for (c, w) in t.cold.checkpoints.iter().zip(&t.warm.checkpoints) {
                let _ = write!(out, ",{},{},{},{}", c.psnr, w.psnr, c.ssim, w.ssim);
            }
            let _ = writeln!(out, ",{},{}", opt(t.cold.steps_to_threshold), opt(t.warm.steps_to_threshold));
        }
        out
    }
}

fn run_arm(
    scene: &TargetScene,
    config: &ExperimentConfig,
    init: PowerInit,
    threshold: Option<f64>,
) -> Result<(ArmReport, Vec<(usize, Array3<f32>)>)> {
    let opt = &config.optimization;
    let options = RunOptions { freeze_powers: false, snapshot_steps: config.checkpoints.clone() };
    let result = optimize_with::<f32>(scene, &config.wavelengths, opt, &init, &options)?;
    let problem = HologramProblem::<f32>::new(scene, &config.wavelengths, opt.anchor_wavelength, opt.scale, opt.subframes)?;
    let target = problem.scaled_target();
    let mut checkpoints = Vec::new();
    let mut images = Vec::new();
    for snap in &result.snapshots {
        let powers = snap.powers.values().mapv(|v| v as f32);
        let composite = problem.composite(&snap.phases, &powers)?;
        checkpoints.push(CheckpointMetrics {
            step: snap.step,
            loss: result.loss_at(snap.step).expect("snapshot within history"),
            psnr: psnr(composite.view(), target.view(), opt.scale)?,
            ssim: ssim(composite.view(), target.view(), opt.scale)?,
        });
        images.push((snap.step, composite));
    }
    let threshold = threshold.unwrap_or_else(|| result.final_loss());
    let steps_to_threshold = result.history.iter().position(|&l| l <= threshold).map(|i| i + 1);
    let report = ArmReport {
        initial_powers: result.initial_powers.clone(),
        final_powers: result.powers.clone(),
        initial_loss: result.initial_loss,
        curve: result.history,
        checkpoints,
        steps_to_threshold,
        initial_phase_hash: result.initial_phase_hash,
    };
    Ok((report, images))
}

fn run_target(id: &str, scene: &TargetScene, model: &EstimatorModel<f32>, config: &ExperimentConfig) -> Result<TargetReport> {
    let estimate = model.estimate_powers(scene.intensity())?;
    let (cold, cold_imgs) = run_arm(scene, config, PowerInit::Uniform, None)?;
    let threshold = *cold.curve.last().expect("at least one step");
    let (warm, warm_imgs) = run_arm(scene, config, PowerInit::Given(estimate), Some(threshold))?;
    let phase_init_match = cold.initial_phase_hash == warm.initial_phase_hash;
    let snapshots = cold_imgs
        .into_iter()
        .map(|(s, i)| ("cold".to_string(), s, i))
        .chain(warm_imgs.into_iter().map(|(s, i)| ("warm".to_string(), s, i)))
        .collect();
    Ok(TargetReport { id: id.to_string(), cold, warm, phase_init_match, snapshots })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn aggregate(targets: &[TargetReport], checkpoints: &[usize]) -> Vec<CheckpointAggregate> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let pick = |arm: fn(&TargetReport) -> &ArmReport, f: fn(&CheckpointMetrics) -> f64| {
                mean(targets.iter().map(|t| f(&arm(t).checkpoints[i])))
            };
            let not_worse = targets.iter().filter(|t| t.warm.checkpoints[i].loss <= t.cold.checkpoints[i].loss).count();
            CheckpointAggregate {
                step,
                cold_loss: pick(|t| &t.cold, |c| c.loss),
                warm_loss: pick(|t| &t.warm, |c| c.loss),
                cold_psnr: pick(|t| &t.cold, |c| c.psnr),
                warm_psnr: pick(|t| &t.warm, |c| c.psnr),
                cold_ssim: pick(|t| &t.cold, |c| c.ssim),
                warm_ssim: pick(|t| &t.warm, |c| c.ssim),
                warm_not_worse: if targets.is_empty() { f64::NAN } else { not_worse as f64 / targets.len() as f64 },
            }
        })
        .collect()
}

/// Cold (uniform powers) versus warm (estimated powers) optimization on every target,
/// with identical seeds and schedules. Failed targets are listed, not fatal.
pub fn run_convergence_experiment(
    targets: &[(String, TargetScene)],
    model: &EstimatorModel<f32>,
    config: &ExperimentConfig,
) -> Result<ConvergenceReport> {
    config.optimization.validate()?;
    if config.optimization.subframes != 3 || config.wavelengths.len() != 3 {
        return Err(Error::InvalidConfig("the estimator predicts 3x3 power matrices".into()));
    }
    let mut checkpoints = config.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.is_empty() || checkpoints[0] == 0 || *checkpoints.last().expect("non-empty") > config.optimization.steps {
        return Err(Error::InvalidConfig(format!(
            "checkpoints {:?} must lie in 1..={}",
            config.checkpoints, config.optimization.steps
        )));
    }
    let config = ExperimentConfig { checkpoints, ..config.clone() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<(String, Result<TargetReport>)> = pool.install(|| {
        targets
            .par_iter()
            .map(|(id, scene)| {
                let r = run_target(id, scene, model, &config);
                if let Err(e) = &r {
                    log::warn!("{id}: {e}");
                }
                (id.clone(), r)
            })
            .collect()
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(t) => reports.push(t),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let aggregate = aggregate(&reports, &config.checkpoints);
    Ok(ConvergenceReport { config, targets: reports, failures, aggregate })
}
