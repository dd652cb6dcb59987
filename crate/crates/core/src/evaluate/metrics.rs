use ndarray::{Array2, ArrayView, ArrayView2, ArrayView3, Axis, Dimension};

use crate::{Error, Result};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<D: Dimension>(a: ArrayView<'_, f32, D>, b: ArrayView<'_, f32, D>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("psnr of {:?} vs {:?}", a.shape(), b.shape())));
    }
    if !(peak > 0.0) {
        return Err(Error::OutOfRange(format!("peak must be positive, got {peak}")));
    }
    if a.is_empty() {
        return Err(Error::InvalidDimension("psnr of empty images".into()));
    }
    let mse = a.iter().zip(b.iter()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian filter over every valid (fully inside) window position.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = (0..k).map(|i| g[i] * img[[y, x + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = (0..k).map(|i| g[i] * rows[[y + i, x]]).sum();
        }
    }
    out
}

/// Structural similarity of one channel: 11x11 Gaussian window (sigma 1.5), valid
/// positions only, `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim_channel(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("ssim of {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDimension(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    if !(peak > 0.0) {
        return Err(Error::OutOfRange(format!("peak must be positive, got {peak}")));
    }
    let g = gaussian_window();
    let a = a.mapv(|v| v as f64);
    let b = b.mapv(|v| v as f64);
    let mu_a = filter_valid(&a, &g);
    let mu_b = filter_valid(&b, &g);
    let e_aa = filter_valid(&(&a * &a), &g);
    let e_bb = filter_valid(&(&b * &b), &g);
    let e_ab = filter_valid(&(&a * &b), &g);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut total = 0.0;
    for (((&ma, &mb), (&aa, &bb)), &ab) in mu_a.iter().zip(&mu_b).zip(e_aa.iter().zip(&e_bb)).zip(&e_ab) {
        let var_a = aa - ma * ma;
        let var_b = bb - mb * mb;
        let cov = ab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean [`ssim_channel`] over the leading (channel) axis.
pub fn ssim(a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("ssim of {:?} vs {:?}", a.dim(), b.dim())));
    }
    let channels = a.dim().0;
    if channels == 0 {
        return Err(Error::InvalidDimension("ssim of an image without channels".into()));
    }
    let mut sum = 0.0;
    for c in 0..channels {
        sum += ssim_channel(a.index_axis(Axis(0), c), b.index_axis(Axis(0), c), peak)?;
    }
    Ok(sum / channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, h: usize, w: usize) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_examples() {
        let a = Array2::from_elem((8, 8), 0.5f32);
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), PSNR_CAP_DB);
        let b = Array2::from_elem((8, 8), 0.4f32);
        // f32 0.5 - 0.4 is not exactly 0.1
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - 20.0).abs() < 1e-5);
        let c = noise(1, 8, 8);
        assert_eq!(psnr(a.view(), c.view(), 1.8).unwrap(), psnr(c.view(), a.view(), 1.8).unwrap());
        assert!(psnr(a.view(), Array2::zeros((8, 7)).view(), 1.0).is_err());
        assert!(psnr(a.view(), b.view(), 0.0).is_err());
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let img = noise(2, 32, 32);
        let n = noise(3, 32, 32).mapv(|v| v - 0.5);
        let scores: Vec<f64> = [0.01f32, 0.05, 0.2]
            .iter()
            .map(|&amp| psnr(img.view(), (&img + &(&n * amp)).view(), 1.0).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let a = noise(4, 24, 30);
        assert_eq!(ssim_channel(a.view(), a.view(), 1.0).unwrap(), 1.0);
        let inv = a.mapv(|v| 1.0 - v);
        assert!(ssim_channel(a.view(), inv.view(), 1.0).unwrap() < 1.0);
        let rgb = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + y * x) % 7) as f32 / 7.0);
        assert_eq!(ssim(rgb.view(), rgb.view(), 1.8).unwrap(), 1.0);
        assert!(ssim_channel(noise(5, 10, 20).view(), noise(6, 10, 20).view(), 1.0).is_err());
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let a = noise(7, 32, 32);
        let b = noise(8, 32, 32);
        let peak = 1.0;
        // direct 2D window weights, no separability
        let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let mut wsum = 0.0;
        let mut win = [[0.0; 11]; 11];
        for y in 0..11 {
            for x in 0..11 {
                win[y][x] = g1[y] * g1[x];
                wsum += win[y][x];
            }
        }
        let (c1, c2) = ((0.01 * peak) * (0.01 * peak), (0.03 * peak) * (0.03 * peak));
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=21 {
            for x0 in 0..=21 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for y in 0..11 {
                    for x in 0..11 {
                        let wgt = win[y][x] / wsum;
                        ma += wgt * a[[y0 + y, x0 + x]] as f64;
                        mb += wgt * b[[y0 + y, x0 + x]] as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for y in 0..11 {
                    for x in 0..11 {
                        let wgt = win[y][x] / wsum;
                        let da = a[[y0 + y, x0 + x]] as f64 - ma;
                        let db = b[[y0 + y, x0 + x]] as f64 - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        let oracle = total / count as f64;
        let fast = ssim_channel(a.view(), b.view(), peak).unwrap();
        assert!((fast - oracle).abs() < 1e-6, "{fast} vs {oracle}");
    }
}
