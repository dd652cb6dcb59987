use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// Bin depth into `planes` equal-width layers, near to far.
///
/// Depth `0` falls in the first bin, depth `1` in the last. Each pixel lands in
/// exactly one mask.
pub fn quantize_depth(depth: ArrayView2<'_, f32>, planes: usize) -> Result<Vec<Array2<bool>>> {
    if planes == 0 {
        return Err(Error::InvalidDimension("need at least one depth plane".into()));
    }
    let labels = depth.mapv(|d| {
        let bin = (d.clamp(0.0, 1.0) as f64 * planes as f64).floor() as usize;
        bin.min(planes - 1) as u8
    });
    Ok(labels_to_masks(&labels, planes))
}

pub fn labels_to_masks(labels: &Array2<u8>, planes: usize) -> Vec<Array2<bool>> {
    (0..planes).map(|k| labels.mapv(|l| l as usize == k)).collect()
}

/// Inverse of [`labels_to_masks`]; pixels claimed by no mask get label 0.
pub fn masks_to_labels(masks: &[Array2<bool>]) -> Array2<u8> {
    let dim = masks.first().map_or((0, 0), |m| m.dim());
    let mut labels = Array2::zeros(dim);
    for (k, m) in masks.iter().enumerate() {
        ndarray::Zip::from(&mut labels).and(m).for_each(|l, &b| {
            if b {
                *l = k as u8;
            }
        });
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_plane_takes_everything() {
        let depth = Array2::from_shape_fn((4, 4), |(y, x)| (y + x) as f32 / 6.0);
        let masks = quantize_depth(depth.view(), 1).unwrap();
        assert_eq!(masks.len(), 1);
        assert!(masks[0].iter().all(|&b| b));
    }

    #[test]
    fn zero_depth_goes_to_first_plane() {
        let masks = quantize_depth(Array2::<f32>::zeros((5, 5)).view(), 3).unwrap();
        assert!(masks[0].iter().all(|&b| b));
        assert!(masks[1].iter().chain(masks[2].iter()).all(|&b| !b));
    }

    #[test]
    fn ramp_splits_in_thirds() {
        // vertical ramp over 30 rows: row y has depth y / 29
        let (h, w) = (30, 8);
        let depth = Array2::from_shape_fn((h, w), |(y, _)| y as f32 / (h - 1) as f32);
        let masks = quantize_depth(depth.view(), 3).unwrap();
        // counting oracle: row y lands in bin floor(3 * y / 29) clipped to 2
        let mut expected = [0usize; 3];
        for y in 0..h {
            let bin = ((3 * y) as f64 / 29.0).floor().min(2.0) as usize;
            expected[bin] += w;
        }
        for (k, m) in masks.iter().enumerate() {
            let count = m.iter().filter(|&&b| b).count();
            assert_eq!(count, expected[k]);
            assert!((count as i64 - (h * w / 3) as i64).abs() <= w as i64);
        }
    }

    #[test]
    fn zero_planes_is_an_error() {
        assert!(quantize_depth(Array2::<f32>::zeros((2, 2)).view(), 0).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = Array2::from_shape_fn((3, 4), |(y, x)| ((y * 4 + x) % 3) as u8);
        assert_eq!(masks_to_labels(&labels_to_masks(&labels, 3)), labels);
    }
}
