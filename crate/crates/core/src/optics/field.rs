use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex;

use crate::{Error, Real, Result};

/// Complex amplitudes on a regular grid with a physical pixel pitch.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField<T: Real = f32> {
    data: Array2<Complex<T>>,
    pitch: f64,
}

impl<T: Real> ComplexField<T> {
    pub fn new(data: Array2<Complex<T>>, pitch: f64) -> Result<Self> {
        let (h, w) = data.dim();
        check_grid(h, w, pitch)?;
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::OutOfRange("field contains non-finite entries".into()));
        }
        Ok(Self { data, pitch })
    }

    /// Unit-amplitude plane wave.
    pub fn ones(height: usize, width: usize, pitch: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), Complex::new(T::one(), T::zero())), pitch)
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex<T>> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Total energy `sum |u|^2`, accumulated in 64-bit.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr().as_f64()).sum()
    }

    pub fn intensity(&self) -> Array2<T> {
        self.data.mapv(|c| c.norm_sqr())
    }
}

pub(crate) fn check_grid(h: usize, w: usize, pitch: f64) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidDimension(format!("grid {h}x{w} is smaller than 2x2")));
    }
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(Error::InvalidDimension(format!("pitch must be positive, got {pitch}")));
    }
    Ok(())
}

/// Stack of per-subframe SLM phase maps in radians, calibrated to an anchor wavelength.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseHologramSet<T: Real = f32> {
    phases: Array3<T>,
    anchor_wavelength: f64,
}

impl<T: Real> PhaseHologramSet<T> {
    pub fn new(phases: Array3<T>, anchor_wavelength: f64) -> Result<Self> {
        let (f, h, w) = phases.dim();
        if f == 0 {
            return Err(Error::InvalidDimension("hologram set needs at least one subframe".into()));
        }
        if h < 2 || w < 2 {
            return Err(Error::InvalidDimension(format!("phase maps {h}x{w} smaller than 2x2")));
        }
        if !(anchor_wavelength.is_finite() && anchor_wavelength > 0.0) {
            return Err(Error::OutOfRange(format!(
                "anchor wavelength must be positive, got {anchor_wavelength}"
            )));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::OutOfRange("phase maps contain non-finite entries".into()));
        }
        Ok(Self { phases, anchor_wavelength })
    }

    pub fn subframes(&self) -> usize {
        self.phases.dim().0
    }

    pub fn dim(&self) -> (usize, usize) {
        let (_, h, w) = self.phases.dim();
        (h, w)
    }

    pub fn phase(&self, subframe: usize) -> ArrayView2<'_, T> {
        self.phases.index_axis(ndarray::Axis(0), subframe)
    }

    pub fn phases(&self) -> &Array3<T> {
        &self.phases
    }

    pub fn into_phases(self) -> Array3<T> {
        self.phases
    }

    pub fn anchor_wavelength(&self) -> f64 {
        self.anchor_wavelength
    }

    pub fn cast<U: Real>(&self) -> PhaseHologramSet<U> {
        PhaseHologramSet {
            phases: self.phases.mapv(|p| U::from_f64_lossy(p.as_f64())),
            anchor_wavelength: self.anchor_wavelength,
        }
    }
}
