use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Normalized laser powers, rows are subframes and columns are primaries.
///
/// Serializes as a row-major nested array, e.g. `[[1,0,0],[0,1,0],[0,0,1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaserPowerMatrix {
    values: Array2<f64>,
}

impl LaserPowerMatrix {
    /// Accepts any finite matrix; use [`LaserPowerMatrix::check_range`] where `[0, 1]` is required.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidDimension("power matrix must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("power matrix has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    /// Field-sequential color: one primary per subframe at full power.
    pub fn identity(n: usize) -> Self {
        Self { values: Array2::eye(n) }
    }

    pub fn uniform(subframes: usize, primaries: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((subframes, primaries), value))
    }

    pub fn subframes(&self) -> usize {
        self.values.nrows()
    }

    pub fn primaries(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, subframe: usize, primary: usize) -> f64 {
        self.values[[subframe, primary]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn check_range(&self) -> Result<()> {
        match self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(Error::OutOfRange(format!("laser power {v} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    pub fn clamped(&self) -> Self {
        Self { values: self.values.mapv(|v| v.clamp(0.0, 1.0)) }
    }

    /// Total power each primary receives across subframes.
    pub fn primary_sums(&self) -> Vec<f64> {
        self.values.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// Reorder subframes: row `i` of the result is row `order[i]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let mut out = self.values.clone();
        for (dst, &src) in order.iter().enumerate() {
            out.row_mut(dst).assign(&self.values.row(src));
        }
        Self { values: out }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged power matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), cols), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(values)
    }
}

impl Serialize for LaserPowerMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LaserPowerMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
