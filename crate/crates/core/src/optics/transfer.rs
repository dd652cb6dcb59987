use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex;

use super::field::check_grid;
use crate::{Error, Real, Result};

/// Band-limited angular-spectrum kernel on the FFT frequency grid.
///
/// Entries are pure phase inside `band_mask` and exactly zero outside it.
#[derive(Clone, Debug)]
pub struct TransferFunction<T: Real = f32> {
    data: Array2<Complex<T>>,
    band_mask: Array2<bool>,
    wavelength: f64,
    distance: f64,
    pitch: f64,
}

impl<T: Real> TransferFunction<T> {
    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn band_mask(&self) -> &Array2<bool> {
        &self.band_mask
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Sample frequencies in standard FFT ordering, cycles per meter.
pub fn fftfreq(n: usize, spacing: f64) -> Vec<f64> {
    let scale = 1.0 / (n as f64 * spacing);
    let positive = (n - 1) / 2 + 1;
    (0..n)
        .map(|k| {
            if k < positive {
                k as f64 * scale
            } else {
                (k as f64 - n as f64) * scale
            }
        })
        .collect()
}

/// Build `H(fx, fy) = exp(i 2pi d/lambda sqrt(1 - (lambda fx)^2 - (lambda fy)^2))`.
///
/// Evanescent frequencies are dropped, as is everything outside the band limit
/// `|fx| <= 1 / (lambda sqrt((2 d dfx)^2 + 1))` (same for `fy`), which keeps the
/// sampled kernel free of aliasing at the given distance.
pub fn make_transfer_function<T: Real>(
    wavelength: f64,
    distance: f64,
    height: usize,
    width: usize,
    pitch: f64,
) -> Result<TransferFunction<T>> {
    check_grid(height, width, pitch)?;
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::InvalidDimension(format!("wavelength must be positive, got {wavelength}")));
    }
    if !distance.is_finite() {
        return Err(Error::InvalidDimension(format!("distance must be finite, got {distance}")));
    }

    let fy = fftfreq(height, pitch);
    let fx = fftfreq(width, pitch);
    let dfx = 1.0 / (width as f64 * pitch);
    let dfy = 1.0 / (height as f64 * pitch);
    let limit_x = 1.0 / (wavelength * ((2.0 * distance * dfx).powi(2) + 1.0).sqrt());
    let limit_y = 1.0 / (wavelength * ((2.0 * distance * dfy).powi(2) + 1.0).sqrt());
    let k_d = 2.0 * PI * distance / wavelength;

    let mut data = Array2::from_elem((height, width), Complex::new(T::zero(), T::zero()));
    let mut band_mask = Array2::from_elem((height, width), false);
    for (y, &v) in fy.iter().enumerate() {
        for (x, &u) in fx.iter().enumerate() {
            let radial = (wavelength * u).powi(2) + (wavelength * v).powi(2);
            if radial >= 1.0 || u.abs() > limit_x || v.abs() > limit_y {
                continue;
            }
            band_mask[[y, x]] = true;
            let phase = k_d * (1.0 - radial).sqrt();
            data[[y, x]] = Complex::new(T::from_f64_lossy(phase.cos()), T::from_f64_lossy(phase.sin()));
        }
    }

    Ok(TransferFunction { data, band_mask, wavelength, distance, pitch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fftfreq_matches_numpy_ordering() {
        assert_eq!(fftfreq(4, 1.0), vec![0.0, 0.25, -0.5, -0.25]);
        assert_eq!(fftfreq(5, 1.0), vec![0.0, 0.2, 0.4, -0.4, -0.2]);
    }

    #[test]
    fn zero_distance_is_identity_on_band() {
        let h = make_transfer_function::<f32>(515e-9, 0.0, 64, 64, 8e-6).unwrap();
        for (c, &m) in h.data().iter().zip(h.band_mask().iter()) {
            if m {
                assert_eq!(*c, Complex::new(1.0, 0.0));
            } else {
                assert_eq!(*c, Complex::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn nonzero_distance_is_pure_phase() {
        let h = make_transfer_function::<f32>(515e-9, 0.005, 64, 64, 8e-6).unwrap();
        for (c, &m) in h.data().iter().zip(h.band_mask().iter()) {
            let r = c.norm() as f64;
            if m {
                assert!((r - 1.0).abs() < 1e-6, "modulus {r}");
            } else {
                assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn dc_value_matches_direct_evaluation() {
        let h = make_transfer_function::<f64>(639e-9, 0.005, 128, 128, 8e-6).unwrap();
        // exp(i * 2pi * 0.005 / 639e-9), evaluated independently in double precision
        let expected = Complex::new(-0.14938950755774352, -0.9887784256503854);
        assert!((h.data()[[0, 0]] - expected).norm() < 1e-9);
    }

    #[test]
    fn band_limit_prunes_high_frequencies_at_long_distance() {
        // 0.15 m at 64x64, 8um: limit = 1/(lambda*sqrt((2*0.15*1953)^2+1)) = 3314 cycles/m
        // against a bin spacing of 1953, so only bins 0 and +-1 survive per axis.
        let h = make_transfer_function::<f32>(515e-9, 0.15, 64, 64, 8e-6).unwrap();
        let kept = h.band_mask().iter().filter(|&&m| m).count();
        assert_eq!(kept, 9);
        assert!(h.band_mask()[[0, 0]] && h.band_mask()[[1, 63]] && !h.band_mask()[[2, 0]]);
    }

    #[test]
    fn evanescent_frequencies_are_cut() {
        // pitch below lambda/2 puts the grid corners past the evanescent cut
        let h = make_transfer_function::<f64>(639e-9, 0.0, 16, 16, 0.25e-6).unwrap();
        assert!(!h.band_mask()[[8, 8]]);
        assert!(h.band_mask()[[0, 0]]);
    }

    #[test]
    fn invalid_inputs_error() {
        assert!(make_transfer_function::<f32>(0.0, 0.0, 8, 8, 8e-6).is_err());
        assert!(make_transfer_function::<f32>(515e-9, 0.0, 1, 8, 8e-6).is_err());
        assert!(make_transfer_function::<f32>(515e-9, 0.0, 8, 8, -1.0).is_err());
    }
}
