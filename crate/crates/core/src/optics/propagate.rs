use ndarray::{Array2, Array3, ArrayView2, Zip};
use num_complex::Complex;

use super::{make_transfer_function, ComplexField, Fft2, PhaseHologramSet, TransferFunction};
use crate::holo::LaserPowerMatrix;
use crate::{Error, Real, Result};

const POWER_TOLERANCE: f64 = 1e-9;

/// `IFFT(FFT(field) * H)`.
pub fn propagate<T: Real>(field: &ComplexField<T>, transfer: &TransferFunction<T>) -> Result<ComplexField<T>> {
    let fft = Fft2::new(field.height(), field.width());
    propagate_with(&fft, field, transfer)
}

/// Same as [`propagate`] with a pre-planned FFT.
pub fn propagate_with<T: Real>(
    fft: &Fft2<T>,
    field: &ComplexField<T>,
    transfer: &TransferFunction<T>,
) -> Result<ComplexField<T>> {
    let dim = (field.height(), field.width());
    if dim != (transfer.height(), transfer.width()) || dim != fft.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field {:?} vs transfer {:?}",
            dim,
            (transfer.height(), transfer.width())
        )));
    }
    if !same_pitch(field.pitch(), transfer.pitch()) {
        return Err(Error::DimensionMismatch(format!(
            "field pitch {} vs transfer pitch {}",
            field.pitch(),
            transfer.pitch()
        )));
    }
    let mut data = field.data().clone();
    fft.forward(&mut data);
    Zip::from(&mut data).and(transfer.data()).for_each(|u, &h| *u = *u * h);
    fft.inverse(&mut data);
    ComplexField::new(data, field.pitch())
}

fn same_pitch(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// `exp(i * ratio * phase)` elementwise.
pub fn phasor<T: Real>(phase: ArrayView2<'_, T>, ratio: T) -> Array2<Complex<T>> {
    phase.mapv(|p| {
        let (s, c) = (ratio * p).sin_cos();
        Complex::new(c, s)
    })
}

/// `sqrt(power) * exp(i * (wavelength / anchor) * phase)`.
///
/// The wavelength ratio is applied as `lambda_p / lambda_a`. Physical SLM
/// dispersion usually scales phase by the inverse ratio; this crate keeps the
/// multi-color formulation's convention so results line up with its datasets.
pub fn phase_to_field<T: Real>(
    phase: ArrayView2<'_, T>,
    power: f64,
    wavelength: f64,
    anchor_wavelength: f64,
    pitch: f64,
) -> Result<ComplexField<T>> {
    check_power(power)?;
    if !(wavelength > 0.0 && anchor_wavelength > 0.0) {
        return Err(Error::OutOfRange(format!(
            "wavelengths must be positive, got {wavelength} and {anchor_wavelength}"
        )));
    }
    let amp = T::from_f64_lossy(power.clamp(0.0, 1.0).sqrt());
    let ratio = T::from_f64_lossy(wavelength / anchor_wavelength);
    let data = phasor(phase, ratio).mapv(|c| c * amp);
    ComplexField::new(data, pitch)
}

pub(crate) fn check_power(power: f64) -> Result<()> {
    if !(power >= -POWER_TOLERANCE && power <= 1.0 + POWER_TOLERANCE) {
        return Err(Error::OutOfRange(format!("laser power {power} outside [0, 1]")));
    }
    Ok(())
}

/// Add pi to every odd row, the off-axis grating used when exporting holograms.
///
/// The hardware pattern is then `exp(-i * output)`. Not part of optimization.
pub fn apply_linear_grating<T: Real>(phase: ArrayView2<'_, T>) -> Array2<T> {
    let pi = T::from_f64_lossy(std::f64::consts::PI);
    let mut out = phase.to_owned();
    for (y, mut row) in out.rows_mut().into_iter().enumerate() {
        if y % 2 == 1 {
            row.mapv_inplace(|p| p + pi);
        }
    }
    out
}

/// Sum after sorting ascending, so the result does not depend on input order.
pub fn sum_sorted<T: Real>(values: &mut [T]) -> T {
    for i in 1..values.len() {
        let mut j = i;
        while j > 0 && values[j] < values[j - 1] {
            values.swap(j, j - 1);
            j -= 1;
        }
    }
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

/// Per-primary intensity `I_p = sum_f |sqrt(l_pf) exp(i lambda_p/lambda_a phi_f) * h_p|^2`.
///
/// Output has shape `(P, H, W)`. Subframe contributions are summed in sorted order
/// per pixel, so relabeling subframes leaves the result bitwise unchanged.
pub fn reconstruct_intensity<T: Real>(
    holograms: &PhaseHologramSet<T>,
    powers: &LaserPowerMatrix,
    wavelengths: &[f64],
    distance: f64,
    pitch: f64,
) -> Result<Array3<T>> {
    let f_count = holograms.subframes();
    let (h, w) = holograms.dim();
    if powers.subframes() != f_count || powers.primaries() != wavelengths.len() {
        return Err(Error::DimensionMismatch(format!(
            "powers {}x{} vs {} subframes and {} wavelengths",
            powers.subframes(),
            powers.primaries(),
            f_count,
            wavelengths.len()
        )));
    }
    let fft = Fft2::new(h, w);
    let mut out = Array3::zeros((wavelengths.len(), h, w));
    for (p, &lambda) in wavelengths.iter().enumerate() {
        let transfer = make_transfer_function::<T>(lambda, distance, h, w, pitch)?;
        let ratio = T::from_f64_lossy(lambda / holograms.anchor_wavelength());
        let mut terms = Vec::with_capacity(f_count);
        for f in 0..f_count {
            let l = powers.get(f, p);
            check_power(l)?;
            let mut a = phasor(holograms.phase(f), ratio);
            fft.forward(&mut a);
            Zip::from(&mut a).and(transfer.data()).for_each(|u, &t| *u = *u * t);
            fft.inverse(&mut a);
            let lt = T::from_f64_lossy(l);
            terms.push(a.mapv(|c| lt * c.norm_sqr()));
        }
        let mut scratch = vec![T::zero(); f_count];
        let mut plane = out.index_axis_mut(ndarray::Axis(0), p);
        for ((y, x), v) in plane.indexed_iter_mut() {
            for (s, t) in scratch.iter_mut().zip(&terms) {
                *s = t[[y, x]];
            }
            *v = sum_sorted(&mut scratch);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((h, w), |_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        ComplexField::new(data, 8e-6).unwrap()
    }

    #[test]
    fn phase_to_field_basic_cases() {
        let zeros = Array2::<f32>::zeros((4, 4));
        let unit = phase_to_field(zeros.view(), 1.0, 515e-9, 515e-9, 8e-6).unwrap();
        assert!(unit.data().iter().all(|&c| c == Complex::new(1.0, 0.0)));
        let quarter = phase_to_field(zeros.view(), 0.25, 515e-9, 515e-9, 8e-6).unwrap();
        assert!(quarter.data().iter().all(|&c| c == Complex::new(0.5, 0.0)));
        let ramp = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f32 * 0.3);
        let dark = phase_to_field(ramp.view(), 0.0, 639e-9, 515e-9, 8e-6).unwrap();
        assert!(dark.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn phase_to_field_scales_phase_by_wavelength_ratio() {
        let phase = Array2::from_elem((2, 2), 1.0f64);
        let f = phase_to_field(phase.view(), 1.0, 639e-9, 515e-9, 8e-6).unwrap();
        let expected = Complex::from_polar(1.0, 639.0 / 515.0);
        assert!((f.data()[[0, 0]] - expected).norm() < 1e-12);
    }

    #[test]
    fn phase_to_field_rejects_bad_power() {
        let zeros = Array2::<f32>::zeros((2, 2));
        assert!(phase_to_field(zeros.view(), 1.1, 515e-9, 515e-9, 8e-6).is_err());
        assert!(phase_to_field(zeros.view(), -0.01, 515e-9, 515e-9, 8e-6).is_err());
        assert!(phase_to_field(zeros.view(), 1.0 + 1e-10, 515e-9, 515e-9, 8e-6).is_ok());
    }

    #[test]
    fn grating_adds_pi_on_odd_rows() {
        let zeros = Array2::<f64>::zeros((4, 4));
        let g = apply_linear_grating(zeros.view());
        for y in 0..4 {
            let want = if y % 2 == 1 { std::f64::consts::PI } else { 0.0 };
            assert!(g.row(y).iter().all(|&v| v == want));
        }
        let half = Array2::from_elem((4, 4), std::f64::consts::FRAC_PI_2);
        let g = apply_linear_grating(half.view());
        assert!((g[[0, 0]] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((g[[1, 2]] - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let twice = apply_linear_grating(g.view());
        assert!((twice[[3, 0]] - (std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(twice[[2, 1]], std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn propagate_rejects_mismatch() {
        let f = random_field(8, 8, 1);
        let h = make_transfer_function::<f64>(515e-9, 0.001, 8, 16, 8e-6).unwrap();
        assert!(matches!(propagate(&f, &h), Err(Error::DimensionMismatch(_))));
        let h = make_transfer_function::<f64>(515e-9, 0.001, 8, 8, 4e-6).unwrap();
        assert!(matches!(propagate(&f, &h), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_distance_propagation_is_identity() {
        let f = random_field(16, 16, 2);
        let h = make_transfer_function::<f64>(515e-9, 0.0, 16, 16, 8e-6).unwrap();
        let out = propagate(&f, &h).unwrap();
        let rms = (out.data().iter().zip(f.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 256.0).sqrt();
        assert!(rms < 1e-12);
    }

    #[test]
    fn sum_sorted_is_order_independent() {
        let mut a = [0.1f32, 1e-8, 3.0, 0.7];
        let mut b = [3.0f32, 0.7, 1e-8, 0.1];
        assert_eq!(sum_sorted(&mut a).to_bits(), sum_sorted(&mut b).to_bits());
    }

    #[test]
    fn reconstruct_identity_and_dark_cases() {
        let zeros = Array3::<f64>::zeros((1, 8, 8));
        let holo = PhaseHologramSet::new(zeros, 515e-9).unwrap();
        let lit = LaserPowerMatrix::new(ndarray::arr2(&[[1.0]])).unwrap();
        let i = reconstruct_intensity(&holo, &lit, &[515e-9], 0.0, 8e-6).unwrap();
        assert!(i.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let dark = LaserPowerMatrix::new(ndarray::arr2(&[[0.0]])).unwrap();
        let i = reconstruct_intensity(&holo, &dark, &[515e-9], 0.003, 8e-6).unwrap();
        assert!(i.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_rejects_shape_mismatch() {
        let holo = PhaseHologramSet::new(Array3::<f64>::zeros((2, 8, 8)), 515e-9).unwrap();
        let powers = LaserPowerMatrix::uniform(3, 3, 0.5).unwrap();
        assert!(reconstruct_intensity(&holo, &powers, &[473e-9, 515e-9, 639e-9], 0.0, 8e-6).is_err());
    }
}
