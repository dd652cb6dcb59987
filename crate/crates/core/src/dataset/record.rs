use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::depth::{labels_to_masks, masks_to_labels};
use crate::holo::{LaserPowerMatrix, OptimizationConfig, TargetScene};
use crate::imageio;
use crate::{Error, Result};

/// Everything about a record except the images and the power matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub mean_luminance: f64,
    pub plane_distances: Vec<f64>,
    pub wavelengths: Vec<f64>,
    pub pitch: f64,
    pub optimization: OptimizationConfig,
}

/// One corpus entry: the target, its depth layering and the optimized powers.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub meta: RecordMeta,
    /// `(3, H, W)` linear intensity, exactly representable as 8-bit sRGB.
    pub target: Array3<f32>,
    /// `(H, W)`, exactly representable as 16-bit.
    pub depth: Array2<f32>,
    pub plane_masks: Vec<Array2<bool>>,
    pub powers: LaserPowerMatrix,
}

impl DatasetRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn scene(&self) -> Result<TargetScene> {
        TargetScene::new(self.target.clone(), self.plane_masks.clone(), self.meta.plane_distances.clone(), self.meta.pitch)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.to_path_buf(), source })
}

/// Write `target.png`, `depth.png`, `masks.png`, `powers.json` and `meta.json` into `dir`.
pub fn save_record(record: &DatasetRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    imageio::save_target_png(&dir.join("target.png"), &record.target)?;
    imageio::save_depth_png(&dir.join("depth.png"), &record.depth)?;
    imageio::save_label_png(&dir.join("masks.png"), &masks_to_labels(&record.plane_masks), record.plane_masks.len())?;
    write_json(&dir.join("powers.json"), &record.powers)?;
    write_json(&dir.join("meta.json"), &record.meta)
}

fn expect_dim(path: &Path, found: (usize, usize), want: (usize, usize)) -> Result<()> {
    if found != want {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("image is {}x{}, meta.json says {}x{}", found.0, found.1, want.0, want.1),
        });
    }
    Ok(())
}

pub fn load_record(dir: &Path) -> Result<DatasetRecord> {
    let meta: RecordMeta = read_json(&dir.join("meta.json"))?;
    let powers: LaserPowerMatrix = read_json(&dir.join("powers.json"))?;
    powers.check_range()?;
    let want = (meta.height, meta.width);

    let target_path = dir.join("target.png");
    let target = imageio::load_target_png(&target_path)?;
    expect_dim(&target_path, (target.dim().1, target.dim().2), want)?;

    let depth_path = dir.join("depth.png");
    let depth = imageio::load_depth_png(&depth_path)?;
    expect_dim(&depth_path, depth.dim(), want)?;

    let mask_path = dir.join("masks.png");
    let labels = imageio::load_label_png(&mask_path)?;
    expect_dim(&mask_path, labels.dim(), want)?;
    let planes = meta.plane_distances.len();
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= planes) {
        return Err(Error::ShapeMismatch {
            path: mask_path,
            detail: format!("label {bad} but only {planes} planes"),
        });
    }
    let plane_masks = labels_to_masks(&labels, planes);
    Ok(DatasetRecord { meta, target, depth, plane_masks, powers })
}

/// Load an external RGB target and optional depth map (import path for real RGBD data).
///
/// Without a depth map every pixel is given depth 0, i.e. the nearest plane.
pub fn import_rgbd(target: &Path, depth: Option<&Path>) -> Result<(Array3<f32>, Array2<f32>)> {
    let rgb = imageio::load_target_png(target)?;
    let (_, h, w) = rgb.dim();
    let depth = match depth {
        Some(p) => {
            let d = imageio::load_depth_png(p)?;
            expect_dim(p, d.dim(), (h, w))?;
            d
        }
        None => Array2::zeros((h, w)),
    };
    Ok((rgb, depth))
}
