use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::{Error, Result};

/// Target intensity with its depth layering.
///
/// `intensity` is `(P, H, W)` in `[0, 1]`; `plane_masks[k]` selects the pixels
/// that should be in focus at `plane_distances[k]`. Masks partition the image.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetScene {
    intensity: Array3<f32>,
    plane_masks: Vec<Array2<bool>>,
    plane_distances: Vec<f64>,
    pitch: f64,
}

impl TargetScene {
    pub fn new(
        intensity: Array3<f32>,
        plane_masks: Vec<Array2<bool>>,
        plane_distances: Vec<f64>,
        pitch: f64,
    ) -> Result<Self> {
        let (_, h, w) = intensity.dim();
        if plane_masks.is_empty() || plane_masks.len() != plane_distances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} masks for {} plane distances",
                plane_masks.len(),
                plane_distances.len()
            )));
        }
        if intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("target intensity outside [0, 1]".into()));
        }
        if !(pitch > 0.0 && pitch.is_finite()) || plane_distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidConfig("pitch and plane distances must be finite, pitch > 0".into()));
        }
        if plane_masks.iter().any(|m| m.dim() != (h, w)) {
            return Err(Error::DimensionMismatch("mask size differs from target size".into()));
        }
        for y in 0..h {
            for x in 0..w {
                let owners = plane_masks.iter().filter(|m| m[[y, x]]).count();
                if owners != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "plane masks must partition the image; pixel ({y}, {x}) is covered {owners} times"
                    )));
                }
            }
        }
        Ok(Self { intensity, plane_masks, plane_distances, pitch })
    }

    /// Everything on one plane.
    pub fn single_plane(intensity: Array3<f32>, distance: f64, pitch: f64) -> Result<Self> {
        let (_, h, w) = intensity.dim();
        Self::new(intensity, vec![Array2::from_elem((h, w), true)], vec![distance], pitch)
    }

    /// Split the target into planes by binning a depth map (see [`crate::dataset::quantize_depth`]).
    pub fn from_depth(intensity: Array3<f32>, depth: ArrayView2<'_, f32>, plane_distances: Vec<f64>, pitch: f64) -> Result<Self> {
        let masks = crate::dataset::quantize_depth(depth, plane_distances.len())?;
        Self::new(intensity, masks, plane_distances, pitch)
    }

    pub fn intensity(&self) -> &Array3<f32> {
        &self.intensity
    }

    pub fn channel(&self, p: usize) -> ArrayView2<'_, f32> {
        self.intensity.index_axis(Axis(0), p)
    }

    pub fn plane_masks(&self) -> &[Array2<bool>] {
        &self.plane_masks
    }

    pub fn plane_distances(&self) -> &[f64] {
        &self.plane_distances
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn primaries(&self) -> usize {
        self.intensity.dim().0
    }

    pub fn dim(&self) -> (usize, usize) {
        let (_, h, w) = self.intensity.dim();
        (h, w)
    }

    /// Rec. 709 luminance averaged over the image (first three channels as RGB).
    pub fn mean_luminance(&self) -> f64 {
        mean_luminance(&self.intensity)
    }
}

pub(crate) fn mean_luminance(rgb: &Array3<f32>) -> f64 {
    let weights = [0.2126, 0.7152, 0.0722];
    if rgb.dim().0 < 3 {
        return rgb.iter().map(|&v| v as f64).sum::<f64>() / rgb.len() as f64;
    }
    weights
        .iter()
        .enumerate()
        .map(|(c, w)| w * rgb.index_axis(Axis(0), c).iter().map(|&v| v as f64).sum::<f64>())
        .sum::<f64>()
        / (rgb.dim().1 * rgb.dim().2) as f64
}
