use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EstimatorModel, CHANNELS, STAGES};
use super::train::{cast_arrays, EpochLog, TrainingConfig, TrainingState};
use crate::holo::AdamState;
use crate::optics::raw::{load_real, save_real};
use crate::{Error, Result};

const MANIFEST: &str = "checkpoint.json";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub convs_per_block: usize,
    pub stages: Vec<usize>,
    pub activation: String,
    pub pooling: String,
}

impl Architecture {
    fn current() -> Self {
        Self {
            input_channels: 3,
            channels: CHANNELS,
            kernel: 3,
            convs_per_block: 2,
            stages: STAGES.to_vec(),
            activation: "relu".into(),
            pooling: "adaptive_avg".into(),
        }
    }
}

/// `checkpoint.json`; every tensor lives in its own f32le blob next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub architecture: Architecture,
    pub epoch: usize,
    pub training: TrainingConfig,
    pub parameters: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    pub adam_step: u64,
    pub adam_m: Vec<TensorEntry>,
    pub adam_v: Vec<TensorEntry>,
    pub log: Vec<EpochLog>,
}

fn write_group(dir: &Path, sub: &str, suffix: &str, names: &[String], arrays: &[ndarray::ArrayD<f32>]) -> Result<Vec<TensorEntry>> {
    let folder = dir.join(sub);
    fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
    names
        .iter()
        .zip(arrays)
        .map(|(name, a)| {
            let file = format!("{sub}/{name}{suffix}.f32");
            save_real(&dir.join(&file), a)?;
            Ok(TensorEntry { name: name.clone(), shape: a.shape().to_vec(), file })
        })
        .collect()
}

fn read_group(dir: &Path, entries: &[TensorEntry]) -> Result<Vec<ndarray::ArrayD<f32>>> {
    entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let a = load_real(&path)?;
            if a.shape() != e.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    path,
                    detail: format!("blob is {:?}, manifest says {:?}", a.shape(), e.shape),
                });
            }
            Ok(a)
        })
        .collect()
}

pub fn save_checkpoint(dir: &Path, state: &TrainingState, config: &TrainingConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = &state.model;
    let names = model.param_names();
    let parameters = write_group(dir, "params", "", &names, &cast_arrays(&model.parameters()))?;
    let buffers = write_group(dir, "buffers", "", &model.buffer_names(), &cast_arrays(&model.buffers()))?;
    let shapes = model.parameters();
    let reshape = |flat: &dyn Fn(&AdamState<f32>) -> &Vec<f32>| -> Vec<ndarray::ArrayD<f32>> {
        state
            .adam
            .iter()
            .zip(&shapes)
            .map(|(s, p)| ndarray::ArrayD::from_shape_vec(p.raw_dim(), flat(s).clone()).expect("moment length"))
            .collect()
    };
    let adam_m = write_group(dir, "adam", ".m", &names, &reshape(&|s| &s.m))?;
    let adam_v = write_group(dir, "adam", ".v", &names, &reshape(&|s| &s.v))?;
    let manifest = CheckpointManifest {
        format: FORMAT,
        architecture: Architecture::current(),
        epoch: state.epoch,
        training: config.clone(),
        parameters,
        buffers,
        adam_step: state.adam.first().map_or(0, |s| s.step),
        adam_m,
        adam_v,
        log: state.log.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainingState, TrainingConfig)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.clone(), source })?;
    if manifest.format != FORMAT || manifest.architecture != Architecture::current() {
        return Err(Error::ShapeMismatch { path, detail: "checkpoint was written for a different architecture".into() });
    }
    let mut model = EstimatorModel::<f32>::new(0);
    let params = read_group(dir, &manifest.parameters)?;
    model.load_arrays(&params, false).map_err(|e| Error::ShapeMismatch { path: path.clone(), detail: e.to_string() })?;
    let buffers = read_group(dir, &manifest.buffers)?;
    model.load_arrays(&buffers, true).map_err(|e| Error::ShapeMismatch { path: path.clone(), detail: e.to_string() })?;
    let m = read_group(dir, &manifest.adam_m)?;
    let v = read_group(dir, &manifest.adam_v)?;
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::ShapeMismatch { path, detail: "optimizer state does not cover every parameter".into() });
    }
    let adam = m
        .into_iter()
        .zip(v)
        .map(|(m, v)| AdamState { m: m.into_iter().collect(), v: v.into_iter().collect(), step: manifest.adam_step })
        .collect();
    Ok((TrainingState { model, adam, epoch: manifest.epoch, log: manifest.log }, manifest.training))
}

/// Model only, for inference.
pub fn load_model(dir: &Path) -> Result<EstimatorModel<f32>> {
    Ok(load_checkpoint(dir)?.0.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainingState::fresh(3);
        state.model.blocks[1].bn_a.running_var[2] = 0.75;
        state.adam[0].m[0] = 0.125;
        state.adam.iter_mut().for_each(|s| s.step = 11);
        state.epoch = 5;
        state.log.push(EpochLog { epoch: 4, train_loss: 0.5, val_loss: None, lr: 0.001 });
        let config = TrainingConfig { seed: 3, ..Default::default() };
        save_checkpoint(dir.path(), &state, &config).unwrap();
        let (back, cfg) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, state);
        assert_eq!(cfg, config);
    }

    #[test]
    fn missing_and_corrupt_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Missing(_))));
        fs::write(dir.path().join(MANIFEST), "{not json").unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn truncated_blob_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &TrainingState::fresh(0), &TrainingConfig::default()).unwrap();
        let blob = dir.path().join("params/block0.a.conv.weight.f32");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("block0.a.conv.weight.f32"), "{err}");
    }
}
