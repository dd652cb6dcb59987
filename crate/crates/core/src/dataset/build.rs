use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::procedural::generate_procedural_target;
use super::record::{load_record, save_record, DatasetRecord, RecordMeta};
use super::quantize_depth;
use crate::holo::{optimize_multicolor, OptimizationConfig, PowerInit, TargetScene};
use crate::imageio::{quantize_depth16, quantize_srgb8};
use crate::{Error, Result};

/// What to build; `config.seed` is the base seed, record `i` uses `seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildSpec {
    pub count: usize,
    pub resolution: usize,
    pub config: OptimizationConfig,
    pub wavelengths: Vec<f64>,
    pub pitch: f64,
    pub plane_distances: Vec<f64>,
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for BuildSpec {
    fn default() -> Self {
        Self {
            count: 200,
            resolution: 128,
            config: OptimizationConfig::default(),
            wavelengths: crate::DEFAULT_WAVELENGTHS.to_vec(),
            pitch: crate::DEFAULT_PITCH,
            plane_distances: crate::DEFAULT_PLANE_DISTANCES.to_vec(),
            jobs: 1,
        }
    }
}

impl BuildSpec {
    pub fn record_seed(&self, index: usize) -> u64 {
        self.config.seed.wrapping_add(index as u64)
    }

    pub fn record_id(index: usize) -> String {
        format!("rec_{index:05}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub records: Vec<ManifestEntry>,
    pub config_hash: String,
    pub spec: BuildSpec,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusSummary {
    pub requested: usize,
    pub built: Vec<String>,
    pub failures: Vec<(String, String)>,
    pub mean_final_loss: f64,
    pub wall_time_s: f64,
}

/// SHA-256 over the canonical JSON of everything that determines the corpus content.
pub fn config_hash(spec: &BuildSpec) -> String {
    let canonical = serde_json::to_vec(spec).expect("spec serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Generate, optimize and return record `index` (nothing is written).
pub fn build_record(spec: &BuildSpec, index: usize) -> Result<DatasetRecord> {
    let seed = spec.record_seed(index);
    let (rgb, depth) = generate_procedural_target(seed, spec.resolution, spec.resolution)?;
    let target = quantize_srgb8(&rgb);
    let depth = quantize_depth16(&depth);
    let masks = quantize_depth(depth.view(), spec.plane_distances.len())?;
    let scene = TargetScene::new(target.clone(), masks.clone(), spec.plane_distances.clone(), spec.pitch)?;
    let config = OptimizationConfig { seed, ..spec.config.clone() };
    let result = optimize_multicolor(&scene, &spec.wavelengths, &config, &PowerInit::Uniform)?;
    let meta = RecordMeta {
        id: BuildSpec::record_id(index),
        seed,
        height: spec.resolution,
        width: spec.resolution,
        final_loss: result.final_loss(),
        initial_loss: result.initial_loss,
        mean_luminance: scene.mean_luminance(),
        plane_distances: spec.plane_distances.clone(),
        wavelengths: spec.wavelengths.clone(),
        pitch: spec.pitch,
        optimization: config,
    };
    Ok(DatasetRecord { meta, target, depth, plane_masks: masks, powers: result.powers })
}

/// Build `spec.count` records under `out_dir` plus `manifest.json`.
///
/// A record that fails is reported in the summary and left out of the manifest;
/// the rest of the batch carries on.
pub fn build_dataset(spec: &BuildSpec, out_dir: &Path) -> Result<CorpusSummary> {
    if spec.count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    spec.config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<(String, Result<f64>)> = pool.install(|| {
        (0..spec.count)
            .into_par_iter()
            .map(|i| {
                let id = BuildSpec::record_id(i);
                let outcome = build_record(spec, i).and_then(|rec| {
                    save_record(&rec, &out_dir.join(&id))?;
                    Ok(rec.meta.final_loss)
                });
                match &outcome {
                    Ok(loss) => log::info!("{id}: final loss {loss:.6}"),
                    Err(e) => log::warn!("{id}: {e}"),
                }
                (id, outcome)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut built = Vec::new();
    let mut failures = Vec::new();
    let mut losses = Vec::new();
    for (i, (id, outcome)) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(loss) => {
                records.push(ManifestEntry { id: id.clone(), seed: spec.record_seed(i) });
                built.push(id);
                losses.push(loss);
            }
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let manifest = CorpusManifest { records, config_hash: config_hash(spec), spec: spec.clone() };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;

    let mean_final_loss = if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 };
    Ok(CorpusSummary {
        requested: spec.count,
        built,
        failures,
        mean_final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn load_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<DatasetRecord>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|source| Error::Parse { path, source })?;
    let records = manifest
        .records
        .iter()
        .map(|entry| load_record(&dir.join(&entry.id)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}
