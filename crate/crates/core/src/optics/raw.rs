//! Raw little-endian `f32` blobs with a JSON sidecar describing shape and kind.
//!
//! `phases.f32` is paired with `phases.json`:
//! `{"shape":[3,128,128],"dtype":"f32le","kind":"phase","pitch_m":8e-6}`.
//! Complex blobs interleave real and imaginary parts, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::ComplexField;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobKind {
    Complex,
    Phase,
    Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub kind: BlobKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pitch_m: Option<f64>,
}

impl Sidecar {
    fn value_count(&self) -> usize {
        let n: usize = self.shape.iter().product();
        if self.kind == BlobKind::Complex {
            2 * n
        } else {
            n
        }
    }
}

/// Sidecar path for a blob: same stem, `.json` extension.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub fn write_blob(path: &Path, sidecar: &Sidecar, values: &[f32]) -> Result<()> {
    if values.len() != sidecar.value_count() {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("{} values for shape {:?}", values.len(), sidecar.shape),
        });
    }
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_blob(path: &Path) -> Result<(Sidecar, Vec<f32>)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: side.clone(), source })?;
    if sidecar.dtype != "f32le" {
        return Err(Error::ShapeMismatch {
            path: side,
            detail: format!("unsupported dtype {:?}", sidecar.dtype),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.value_count() * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("expected {expected} bytes for shape {:?}, found {}", sidecar.shape, bytes.len()),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((sidecar, values))
}

pub fn save_field<T: Real>(path: &Path, field: &ComplexField<T>) -> Result<()> {
    let mut values = Vec::with_capacity(field.data().len() * 2);
    for c in field.data().iter() {
        values.push(c.re.as_f64() as f32);
        values.push(c.im.as_f64() as f32);
    }
    let sidecar = Sidecar {
        shape: vec![field.height(), field.width()],
        dtype: "f32le".into(),
        kind: BlobKind::Complex,
        pitch_m: Some(field.pitch()),
    };
    write_blob(path, &sidecar, &values)
}

pub fn load_field(path: &Path) -> Result<ComplexField<f32>> {
    let (sidecar, values) = read_blob(path)?;
    if sidecar.kind != BlobKind::Complex || sidecar.shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("expected a 2D complex blob, found {:?} {:?}", sidecar.kind, sidecar.shape),
        });
    }
    let data: Vec<Complex<f32>> = values.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect();
    let arr = Array2::from_shape_vec((sidecar.shape[0], sidecar.shape[1]), data)
        .expect("length checked against sidecar");
    ComplexField::new(arr, sidecar.pitch_m.unwrap_or(crate::DEFAULT_PITCH))
}

/// Save a `(F, H, W)` stack of phase maps.
pub fn save_phases<T: Real>(path: &Path, phases: &Array3<T>, pitch: f64) -> Result<()> {
    let values: Vec<f32> = phases.iter().map(|p| p.as_f64() as f32).collect();
    let sidecar = Sidecar {
        shape: phases.shape().to_vec(),
        dtype: "f32le".into(),
        kind: BlobKind::Phase,
        pitch_m: Some(pitch),
    };
    write_blob(path, &sidecar, &values)
}

pub fn load_phases(path: &Path) -> Result<(Array3<f32>, f64)> {
    let (sidecar, values) = read_blob(path)?;
    let shape = match sidecar.shape.as_slice() {
        [f, h, w] => (*f, *h, *w),
        [h, w] => (1, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("expected 2D or 3D phase blob, found shape {other:?}"),
            })
        }
    };
    let arr = Array3::from_shape_vec(shape, values).expect("length checked against sidecar");
    Ok((arr, sidecar.pitch_m.unwrap_or(crate::DEFAULT_PITCH)))
}

/// Plain real tensor of any rank (used by model checkpoints).
pub fn save_real(path: &Path, values: &ArrayD<f32>) -> Result<()> {
    let sidecar = Sidecar {
        shape: values.shape().to_vec(),
        dtype: "f32le".into(),
        kind: BlobKind::Real,
        pitch_m: None,
    };
    let flat: Vec<f32> = values.iter().copied().collect();
    write_blob(path, &sidecar, &flat)
}

pub fn load_real(path: &Path) -> Result<ArrayD<f32>> {
    let (sidecar, values) = read_blob(path)?;
    Ok(ArrayD::from_shape_vec(IxDyn(&sidecar.shape), values).expect("length checked against sidecar"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.f32");
        let data = Array2::from_shape_fn((3, 4), |(y, x)| Complex::new(y as f32 * 0.1 - 0.7, x as f32 / 3.0));
        let field = ComplexField::new(data, 8e-6).unwrap();
        save_field(&path, &field).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 3 * 4 * 8);
        let back = load_field(&path).unwrap();
        assert_eq!(back, field);
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side["kind"], "complex");
        assert_eq!(side["dtype"], "f32le");
        assert_eq!(side["shape"], serde_json::json!([3, 4]));
    }

    #[test]
    fn phases_are_little_endian_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phases.f32");
        let phases = Array3::from_shape_fn((2, 2, 3), |(f, y, x)| (f * 6 + y * 3 + x) as f32);
        save_phases(&path, &phases, 8e-6).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[4..8], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[44..48], &11.0f32.to_le_bytes());
        let (back, pitch) = load_phases(&path).unwrap();
        assert_eq!(back, phases);
        assert_eq!(pitch, 8e-6);
    }

    #[test]
    fn truncated_blob_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phases.f32");
        save_phases(&path, &Array3::<f32>::zeros((1, 4, 4)), 8e-6).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match load_phases(&path) {
            Err(Error::ShapeMismatch { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_sidecar_reports_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phases.f32");
        save_phases(&path, &Array3::<f32>::zeros((1, 2, 2)), 8e-6).unwrap();
        fs::write(sidecar_path(&path), "{\"shape\": [1, 2").unwrap();
        assert!(matches!(load_phases(&path), Err(Error::Parse { .. })));
    }
}
