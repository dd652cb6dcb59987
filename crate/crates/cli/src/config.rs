//! Run configuration: a flat JSON object with dotted keys.
//!
//! Layers, lowest first: built-in defaults, the `--config` file, `HOLO_SEED`,
//! command-line flags. The resolved result is echoed as `run_config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use chromaholo::estimator::TrainingConfig;
use chromaholo::evaluate::ExperimentConfig;
use chromaholo::holo::OptimizationConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

macro_rules! run_config {
    ($($key:literal => $field:ident : $ty:ty),* $(,)?) => {
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct RunConfig {
            $(
                #[serde(rename = $key, default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl RunConfig {
            /// Fill every unset field from `lower`.
            pub fn over(self, lower: RunConfig) -> RunConfig {
                RunConfig { $($field: self.$field.or(lower.$field),)* }
            }
        }
    };
}

run_config! {
    "command" => command: String,
    "count" => count: usize,
    "resolution" => resolution: usize,
    "jobs" => jobs: usize,
    "optics.wavelengths" => wavelengths: Vec<f64>,
    "optics.anchor_wavelength" => anchor_wavelength: f64,
    "optics.pitch" => pitch: f64,
    "optics.plane_distances" => plane_distances: Vec<f64>,
    "optim.steps" => steps: usize,
    "optim.lr_start" => lr_start: f64,
    "optim.lr_end" => lr_end: f64,
    "optim.scale" => scale: f64,
    "optim.subframes" => subframes: usize,
    "optim.seed" => seed: u64,
    "optim.beta1" => beta1: f64,
    "optim.beta2" => beta2: f64,
    "optim.eps" => eps: f64,
    "optim.export_grating" => export_grating: bool,
    "optim.single_color" => single_color: bool,
    "train.epochs" => epochs: usize,
    "train.lr_start" => train_lr_start: f64,
    "train.lr_end" => train_lr_end: f64,
    "train.batch_size" => batch_size: usize,
    "train.seed" => train_seed: u64,
    "train.val_fraction" => val_fraction: f64,
    "eval.checkpoints" => checkpoints: Vec<usize>,
    "eval.procedural" => procedural: usize,
    "eval.target_seed" => target_seed: u64,
    "paths.out" => out: PathBuf,
    "paths.corpus" => corpus: PathBuf,
    "paths.target" => target: PathBuf,
    "paths.depth" => depth: PathBuf,
    "paths.model" => model: PathBuf,
    "paths.resume" => resume: PathBuf,
    "paths.targets" => targets: PathBuf,
    "paths.input" => input: PathBuf,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let optim = OptimizationConfig::default();
        let train = TrainingConfig::default();
        RunConfig {
            count: Some(200),
            resolution: Some(128),
            jobs: Some(1),
            wavelengths: Some(chromaholo::DEFAULT_WAVELENGTHS.to_vec()),
            anchor_wavelength: Some(chromaholo::DEFAULT_ANCHOR_WAVELENGTH),
            pitch: Some(chromaholo::DEFAULT_PITCH),
            plane_distances: Some(chromaholo::DEFAULT_PLANE_DISTANCES.to_vec()),
            steps: Some(optim.steps),
            lr_start: Some(optim.lr_start),
            lr_end: Some(optim.lr_end),
            scale: Some(optim.scale),
            subframes: Some(optim.subframes),
            seed: Some(optim.seed),
            beta1: Some(optim.beta1),
            beta2: Some(optim.beta2),
            eps: Some(optim.eps),
            export_grating: Some(false),
            single_color: Some(false),
            epochs: Some(train.epochs),
            train_lr_start: Some(train.lr_start),
            train_lr_end: Some(train.lr_end),
            batch_size: Some(train.batch_size),
            train_seed: Some(train.seed),
            val_fraction: Some(train.val_fraction),
            checkpoints: Some(vec![70, 300]),
            procedural: Some(0),
            target_seed: Some(1_000_000),
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::NoInput { path: path.into(), detail: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// `HOLO_SEED` sets both the optimization and the training seed.
    pub fn from_env() -> CliResult<Self> {
        match std::env::var("HOLO_SEED") {
            Ok(v) => {
                let seed: u64 = v.trim().parse().map_err(|_| CliError::Usage(format!("HOLO_SEED={v} is not an integer")))?;
                Ok(RunConfig { seed: Some(seed), train_seed: Some(seed), ..Default::default() })
            }
            Err(_) => Ok(RunConfig::default()),
        }
    }

    /// flags > env > file > `base` (defaults, or defaults under a checkpoint's settings).
    pub fn resolve(flags: RunConfig, file: Option<&Path>, base: RunConfig) -> CliResult<Self> {
        let file = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(flags.over(RunConfig::from_env()?).over(file).over(base))
    }

    pub fn optimization(&self) -> CliResult<OptimizationConfig> {
        let c = OptimizationConfig {
            steps: self.steps.expect("resolved"),
            lr_start: self.lr_start.expect("resolved"),
            lr_end: self.lr_end.expect("resolved"),
            scale: self.scale.expect("resolved"),
            beta1: self.beta1.expect("resolved"),
            beta2: self.beta2.expect("resolved"),
            eps: self.eps.expect("resolved"),
            seed: self.seed.expect("resolved"),
            subframes: self.subframes.expect("resolved"),
            anchor_wavelength: self.anchor_wavelength.expect("resolved"),
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn training(&self) -> CliResult<TrainingConfig> {
        let c = TrainingConfig {
            epochs: self.epochs.expect("resolved"),
            lr_start: self.train_lr_start.expect("resolved"),
            lr_end: self.train_lr_end.expect("resolved"),
            batch_size: self.batch_size.expect("resolved"),
            seed: self.train_seed.expect("resolved"),
            val_fraction: self.val_fraction.expect("resolved"),
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn experiment(&self) -> CliResult<ExperimentConfig> {
        Ok(ExperimentConfig {
            optimization: self.optimization()?,
            wavelengths: self.wavelengths(),
            checkpoints: self.checkpoints.clone().expect("resolved"),
            jobs: self.jobs(),
        })
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        self.wavelengths.clone().expect("resolved")
    }

    pub fn pitch(&self) -> f64 {
        self.pitch.expect("resolved")
    }

    pub fn plane_distances(&self) -> Vec<f64> {
        self.plane_distances.clone().expect("resolved")
    }

    pub fn jobs(&self) -> usize {
        self.jobs.expect("resolved").max(1)
    }

    /// Write `run_config.json` into `dir`.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| chromaholo::Error::Io { path: dir.into(), source: e })?;
        let path = dir.join("run_config.json");
        let text = serde_json::to_string_pretty(self).map_err(chromaholo::Error::from)? + "\n";
        fs::write(&path, text).map_err(|e| chromaholo::Error::Io { path, source: e })?;
        Ok(())
    }

    pub fn out(&self) -> CliResult<PathBuf> {
        self.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"optim.steps": 50, "optim.scale": 1.2, "paths.out": "x"}"#).unwrap();
        let flags = RunConfig { steps: Some(9), ..Default::default() };
        let r = RunConfig::resolve(flags, Some(&file), RunConfig::defaults()).unwrap();
        assert_eq!(r.steps, Some(9));
        assert_eq!(r.scale, Some(1.2));
        assert_eq!(r.out, Some(PathBuf::from("x")));
        assert_eq!(r.epochs, Some(40));
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"optim.stepz": 50}"#).unwrap();
        assert!(matches!(RunConfig::load(&file), Err(CliError::Usage(_))));
    }

    #[test]
    fn echo_reloads_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let r = RunConfig { command: Some("optimize".into()), ..RunConfig::defaults() };
        r.echo(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join("run_config.json")).unwrap(), r);
    }
}
