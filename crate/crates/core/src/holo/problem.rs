use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex;

use super::{LaserPowerMatrix, TargetScene};
use crate::optics::{make_transfer_function, phasor, sum_sorted, Fft2, PhaseHologramSet};
use crate::{Error, Real, Result};

/// Loss value with gradients for every phase pixel and every power entry.
#[derive(Clone, Debug)]
pub struct LossGradients<T: Real> {
    pub loss: f64,
    /// `(F, H, W)`, same layout as the phase stack.
    pub phases: Array3<T>,
    /// `(F, P)`, same layout as the power matrix.
    pub powers: Array2<T>,
}

/// Precomputed kernels, masks and scaled targets for one scene.
///
/// The image loss is
/// `sum_k sum_p mean_{x in mask_k} (I_pk(x) - s t_p(x))^2` with
/// `I_pk = sum_f l_pf |exp(i a_p phi_f) * h_pk|^2` and `a_p = lambda_p / lambda_anchor`.
/// Gradients use the adjoint of the propagation operator, `IFFT(conj(H) FFT(.))`.
pub struct HologramProblem<T: Real> {
    height: usize,
    width: usize,
    subframes: usize,
    ratios: Vec<T>,
    /// `[p][k]`
    transfers: Vec<Vec<Array2<Complex<T>>>>,
    masks: Vec<Array2<T>>,
    mask_counts: Vec<usize>,
    /// `s * t_p`
    targets: Vec<Array2<T>>,
    fft: Fft2<T>,
}

struct Forward<T: Real> {
    /// `[(p * F + f) * K + k]`, `None` where the term was skipped.
    amplitudes: Vec<Option<Array2<Complex<T>>>>,
    /// `[p * K + k]`
    intensities: Vec<Array2<T>>,
}

impl<T: Real> HologramProblem<T> {
    pub fn new(
        scene: &TargetScene,
        wavelengths: &[f64],
        anchor_wavelength: f64,
        scale: f64,
        subframes: usize,
    ) -> Result<Self> {
        let (height, width) = scene.dim();
        if wavelengths.len() != scene.primaries() {
            return Err(Error::DimensionMismatch(format!(
                "{} wavelengths for a {}-channel target",
                wavelengths.len(),
                scene.primaries()
            )));
        }
        if subframes == 0 {
            return Err(Error::InvalidDimension("need at least one subframe".into()));
        }
        if !(anchor_wavelength > 0.0) {
            return Err(Error::OutOfRange("anchor wavelength must be positive".into()));
        }
        let mut transfers = Vec::with_capacity(wavelengths.len());
        for &lambda in wavelengths {
            let per_plane = scene
                .plane_distances()
                .iter()
                .map(|&d| make_transfer_function::<T>(lambda, d, height, width, scene.pitch()).map(|t| t.data().clone()))
                .collect::<Result<Vec<_>>>()?;
            transfers.push(per_plane);
        }
        let masks = scene
            .plane_masks()
            .iter()
            .map(|m| m.mapv(|b| if b { T::one() } else { T::zero() }))
            .collect();
        let mask_counts = scene.plane_masks().iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
        let s = T::from_f64_lossy(scale);
        let targets = (0..scene.primaries())
            .map(|p| scene.channel(p).mapv(|v| s * T::from_f64_lossy(v as f64)))
            .collect();
        Ok(Self {
            height,
            width,
            subframes,
            ratios: wavelengths.iter().map(|&l| T::from_f64_lossy(l / anchor_wavelength)).collect(),
            transfers,
            masks,
            mask_counts,
            targets,
            fft: Fft2::new(height, width),
        })
    }

    pub fn primaries(&self) -> usize {
        self.ratios.len()
    }

    pub fn planes(&self) -> usize {
        self.masks.len()
    }

    pub fn subframes(&self) -> usize {
        self.subframes
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn check(&self, phases: &Array3<T>, powers: &Array2<T>) -> Result<()> {
        if phases.dim() != (self.subframes, self.height, self.width) {
            return Err(Error::DimensionMismatch(format!(
                "phases {:?}, expected {:?}",
                phases.dim(),
                (self.subframes, self.height, self.width)
            )));
        }
        if powers.dim() != (self.subframes, self.primaries()) {
            return Err(Error::DimensionMismatch(format!(
                "powers {:?}, expected {:?}",
                powers.dim(),
                (self.subframes, self.primaries())
            )));
        }
        Ok(())
    }

    fn forward(&self, phases: &Array3<T>, powers: &Array2<T>, all_terms: bool) -> Forward<T> {
        let (f_count, k_count) = (self.subframes, self.planes());
        let zero = Complex::new(T::zero(), T::zero());
        let mut amplitudes = Vec::with_capacity(self.primaries() * f_count * k_count);
        let mut intensities = Vec::with_capacity(self.primaries() * k_count);
        for p in 0..self.primaries() {
            let spectra: Vec<Option<Array2<Complex<T>>>> = (0..f_count)
                .map(|f| {
                    if !all_terms && powers[[f, p]] == T::zero() {
                        return None;
                    }
                    let mut u = phasor(phases.index_axis(Axis(0), f), self.ratios[p]);
                    self.fft.forward(&mut u);
                    Some(u)
                })
                .collect();
            let mut per_plane: Vec<Vec<Option<Array2<Complex<T>>>>> = Vec::with_capacity(k_count);
            for k in 0..k_count {
                let h = &self.transfers[p][k];
                let fields: Vec<Option<Array2<Complex<T>>>> = spectra
                    .iter()
                    .map(|spec| {
                        spec.as_ref().map(|s| {
                            let mut a = Array2::from_elem((self.height, self.width), zero);
                            Zip::from(&mut a).and(s).and(h).for_each(|a, &s, &h| *a = s * h);
                            self.fft.inverse(&mut a);
                            a
                        })
                    })
                    .collect();
                let mut intensity = Array2::zeros((self.height, self.width));
                let mut scratch = vec![T::zero(); f_count];
                for ((y, x), out) in intensity.indexed_iter_mut() {
                    for (f, slot) in scratch.iter_mut().enumerate() {
                        *slot = match &fields[f] {
                            Some(a) => powers[[f, p]] * a[[y, x]].norm_sqr(),
                            None => T::zero(),
                        };
                    }
                    *out = sum_sorted(&mut scratch);
                }
                intensities.push(intensity);
                per_plane.push(fields);
            }
            // reorder [k][f] -> [f][k]
            let mut by_f: Vec<Vec<Option<Array2<Complex<T>>>>> = (0..f_count).map(|_| Vec::with_capacity(k_count)).collect();
            for fields in per_plane {
                for (f, a) in fields.into_iter().enumerate() {
                    by_f[f].push(a);
                }
            }
            amplitudes.extend(by_f.into_iter().flatten());
        }
        Forward { amplitudes, intensities }
    }

    /// Per-(plane, primary) mean squared residual, accumulated in f64.
    fn loss_from(&self, fwd: &Forward<T>) -> f64 {
        let k_count = self.planes();
        let mut total = 0.0;
        for k in 0..k_count {
            if self.mask_counts[k] == 0 {
                continue;
            }
            for p in 0..self.primaries() {
                let mut acc = 0.0f64;
                Zip::from(&fwd.intensities[p * k_count + k])
                    .and(&self.targets[p])
                    .and(&self.masks[k])
                    .for_each(|&i, &t, &m| {
                        if m > T::zero() {
                            let r = (i - t).as_f64();
                            acc += r * r;
                        }
                    });
                total += acc / self.mask_counts[k] as f64;
            }
        }
        total
    }

    pub fn loss(&self, phases: &Array3<T>, powers: &Array2<T>) -> Result<f64> {
        self.check(phases, powers)?;
        let fwd = self.forward(phases, powers, false);
        Ok(self.loss_from(&fwd))
    }

    /// Loss plus exact gradients. With `power_grads == false` the power gradient is
    /// left at zero and zero-power terms are skipped entirely.
    pub fn loss_and_gradients(&self, phases: &Array3<T>, powers: &Array2<T>, power_grads: bool) -> Result<LossGradients<T>> {
        self.check(phases, powers)?;
        let (f_count, k_count) = (self.subframes, self.planes());
        let fwd = self.forward(phases, powers, power_grads);
        let loss = self.loss_from(&fwd);

        // dL/dI for every (p, k)
        let two = T::from_f64_lossy(2.0);
        let residual_grads: Vec<Array2<T>> = (0..self.primaries())
            .flat_map(|p| (0..k_count).map(move |k| (p, k)))
            .map(|(p, k)| {
                if self.mask_counts[k] == 0 {
                    return Array2::zeros((self.height, self.width));
                }
                let inv_n = T::from_f64_lossy(1.0 / self.mask_counts[k] as f64);
                let mut g = Array2::zeros((self.height, self.width));
                Zip::from(&mut g)
                    .and(&fwd.intensities[p * k_count + k])
                    .and(&self.targets[p])
                    .and(&self.masks[k])
                    .for_each(|g, &i, &t, &m| *g = two * (i - t) * m * inv_n);
                g
            })
            .collect();

        let zero = Complex::new(T::zero(), T::zero());
        let mut d_phases = Array3::zeros((f_count, self.height, self.width));
        let mut d_powers = Array2::zeros((f_count, self.primaries()));
        for p in 0..self.primaries() {
            for f in 0..f_count {
                let l = powers[[f, p]];
                if power_grads {
                    let mut acc = 0.0f64;
                    for k in 0..k_count {
                        let a = fwd.amplitudes[(p * f_count + f) * k_count + k].as_ref().expect("all terms kept");
                        Zip::from(a).and(&residual_grads[p * k_count + k]).for_each(|a, &g| {
                            acc += (g * a.norm_sqr()).as_f64();
                        });
                    }
                    d_powers[[f, p]] = T::from_f64_lossy(acc);
                }
                if l == T::zero() {
                    continue;
                }
                // B = sum_k IFFT(conj(H_pk) FFT(g_pk A_pfk))
                let mut back = Array2::from_elem((self.height, self.width), zero);
                for k in 0..k_count {
                    let a = fwd.amplitudes[(p * f_count + f) * k_count + k].as_ref().expect("non-zero term kept");
                    let mut tmp = Array2::from_elem((self.height, self.width), zero);
                    Zip::from(&mut tmp).and(a).and(&residual_grads[p * k_count + k]).for_each(|t, &a, &g| *t = a * g);
                    self.fft.forward(&mut tmp);
                    Zip::from(&mut back).and(&tmp).and(&self.transfers[p][k]).for_each(|b, &t, &h| *b = *b + h.conj() * t);
                }
                self.fft.inverse(&mut back);
                let u = phasor(phases.index_axis(Axis(0), f), self.ratios[p]);
                let coeff = -two * l * self.ratios[p];
                let mut grad = d_phases.index_axis_mut(Axis(0), f);
                Zip::from(&mut grad).and(&back).and(&u).for_each(|d, &b, &u| {
                    *d = *d + coeff * (b.conj() * u).im;
                });
            }
        }
        Ok(LossGradients { loss, phases: d_phases, powers: d_powers })
    }

    /// Per-primary reconstruction at plane `k`, shape `(P, H, W)`.
    pub fn reconstruct(&self, phases: &Array3<T>, powers: &Array2<T>, k: usize) -> Result<Array3<T>> {
        self.check(phases, powers)?;
        let fwd = self.forward(phases, powers, false);
        Ok(self.stack_plane(&fwd, k))
    }

    fn stack_plane(&self, fwd: &Forward<T>, k: usize) -> Array3<T> {
        let k_count = self.planes();
        let mut out = Array3::zeros((self.primaries(), self.height, self.width));
        for p in 0..self.primaries() {
            out.index_axis_mut(Axis(0), p).assign(&fwd.intensities[p * k_count + k]);
        }
        out
    }

    /// Every pixel taken from the plane its mask assigns it to, shape `(P, H, W)`.
    pub fn composite(&self, phases: &Array3<T>, powers: &Array2<T>) -> Result<Array3<T>> {
        self.check(phases, powers)?;
        let fwd = self.forward(phases, powers, false);
        let k_count = self.planes();
        let mut out = Array3::zeros((self.primaries(), self.height, self.width));
        for p in 0..self.primaries() {
            let mut chan = out.index_axis_mut(Axis(0), p);
            for k in 0..k_count {
                Zip::from(&mut chan)
                    .and(&fwd.intensities[p * k_count + k])
                    .and(&self.masks[k])
                    .for_each(|o, &i, &m| {
                        if m > T::zero() {
                            *o = i;
                        }
                    });
            }
        }
        Ok(out)
    }

    /// `s * t`, shape `(P, H, W)`.
    pub fn scaled_target(&self) -> Array3<T> {
        let mut out = Array3::zeros((self.primaries(), self.height, self.width));
        for (p, t) in self.targets.iter().enumerate() {
            out.index_axis_mut(Axis(0), p).assign(t);
        }
        out
    }
}

pub(crate) fn powers_as<T: Real>(powers: &LaserPowerMatrix) -> Array2<T> {
    powers.values().mapv(T::from_f64_lossy)
}

fn problem_for<T: Real>(
    holograms: &PhaseHologramSet<T>,
    powers: &LaserPowerMatrix,
    scene: &TargetScene,
    scale: f64,
    wavelengths: &[f64],
) -> Result<HologramProblem<T>> {
    if holograms.dim() != scene.dim() {
        return Err(Error::DimensionMismatch(format!(
            "holograms {:?} vs scene {:?}",
            holograms.dim(),
            scene.dim()
        )));
    }
    if powers.subframes() != holograms.subframes() || powers.primaries() != wavelengths.len() {
        return Err(Error::DimensionMismatch(format!(
            "powers {}x{} vs {} subframes, {} primaries",
            powers.subframes(),
            powers.primaries(),
            holograms.subframes(),
            wavelengths.len()
        )));
    }
    HologramProblem::new(scene, wavelengths, holograms.anchor_wavelength(), scale, holograms.subframes())
}

/// Masked multi-plane L2 image loss (mean over each plane's pixels, summed over planes and primaries).
pub fn image_loss<T: Real>(
    holograms: &PhaseHologramSet<T>,
    powers: &LaserPowerMatrix,
    scene: &TargetScene,
    scale: f64,
    wavelengths: &[f64],
) -> Result<f64> {
    let problem = problem_for(holograms, powers, scene, scale, wavelengths)?;
    problem.loss(holograms.phases(), &powers_as(powers))
}

/// Exact gradients of [`image_loss`] with respect to every phase pixel and power entry.
pub fn loss_gradients<T: Real>(
    holograms: &PhaseHologramSet<T>,
    powers: &LaserPowerMatrix,
    scene: &TargetScene,
    scale: f64,
    wavelengths: &[f64],
) -> Result<LossGradients<T>> {
    let problem = problem_for(holograms, powers, scene, scale, wavelengths)?;
    problem.loss_and_gradients(holograms.phases(), &powers_as(powers), true)
}
