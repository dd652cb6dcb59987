use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::Real;

/// Planned 2D FFT for a fixed grid size.
///
/// Forward transform is unnormalized; the inverse is scaled by `1 / (h * w)`.
/// Plans are immutable, so one instance can be shared across threads.
pub struct Fft2<T: Real> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, data: &mut Array2<Complex<T>>) {
        self.process(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex<T>>) {
        self.process(data, &self.row_inv, &self.col_inv);
        let norm = T::one() / T::from_usize(self.height * self.width).unwrap();
        data.mapv_inplace(|c| c * norm);
    }

    fn process(&self, data: &mut Array2<Complex<T>>, rows: &Arc<dyn Fft<T>>, cols: &Arc<dyn Fft<T>>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(data.dim(), (h, w), "fft grid size mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        rows.process(buf);

        let mut transposed = vec![Complex::new(T::zero(), T::zero()); h * w];
        for y in 0..h {
            for x in 0..w {
                transposed[x * h + y] = buf[y * w + x];
            }
        }
        cols.process(&mut transposed);
        for x in 0..w {
            for y in 0..h {
                buf[y * w + x] = transposed[x * h + y];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_recovers_input() {
        let fft = Fft2::<f64>::new(6, 10);
        let orig = Array2::from_shape_fn((6, 10), |(y, x)| {
            Complex::new((y * 10 + x) as f64 * 0.1, (x as f64 - y as f64).sin())
        });
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let fft = Fft2::<f64>::new(4, 8);
        let mut data = Array2::from_elem((4, 8), Complex::new(2.0, 0.0));
        fft.forward(&mut data);
        assert!((data[[0, 0]].re - 64.0).abs() < 1e-12);
        assert!(data.iter().skip(1).all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn matches_direct_dft() {
        let (h, w) = (3, 5);
        let input = Array2::from_shape_fn((h, w), |(y, x)| {
            Complex::new(((y * 7 + x * 3) % 5) as f64, (y as f64) - 0.5 * x as f64)
        });
        let mut fast = input.clone();
        Fft2::new(h, w).forward(&mut fast);
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                        acc += input[[y, x]] * Complex::from_polar(1.0, ang);
                    }
                }
                assert!((acc - fast[[ky, kx]]).norm() < 1e-9);
            }
        }
    }
}
