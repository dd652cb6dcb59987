//! Layer kernels with hand-written backward passes.
//!
//! Everything works on `(N, C, H, W)` arrays in standard layout.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};

use super::Tensor4;
use crate::{Error, Real, Result};

/// Gradients of a convolution.
pub struct ConvGrads<T: Real> {
    pub input: Array4<T>,
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

fn check_conv<T: Real>(x: &Array4<T>, weight: &Array4<T>, bias: &Array1<T>, pad: usize) -> Result<()> {
    let (o, c, kh, kw) = weight.dim();
    if kh != kw || kh != 2 * pad + 1 {
        return Err(Error::DimensionMismatch(format!("kernel {kh}x{kw} with padding {pad} is not shape-preserving")));
    }
    if x.dim().1 != c {
        return Err(Error::DimensionMismatch(format!("input has {} channels, weights expect {c}", x.dim().1)));
    }
    if bias.len() != o {
        return Err(Error::DimensionMismatch(format!("{} biases for {o} output channels", bias.len())));
    }
    Ok(())
}

/// `(C, H, W)` to `(C*k*k, H*W)` patches with zero padding.
fn im2col<T: Real>(x: ArrayView3<'_, T>, k: usize, pad: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, h * w));
    let src = x.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let out = &mut dst[row * h * w..(row + 1) * h * w];
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut out[y * w..(y + 1) * w];
                    let shift = kx as isize - pad as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = (w as isize - shift).min(w as isize) as usize;
                    for x in x0..x1 {
                        dst_row[x] = src_row[(x as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into an image.
fn col2im<T: Real>(cols: ArrayView2<'_, T>, c: usize, h: usize, w: usize, k: usize, pad: usize) -> ndarray::Array3<T> {
    let mut img = ndarray::Array3::zeros((c, h, w));
    let src = cols.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = img.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let patch = &src[row * h * w..(row + 1) * h * w];
                for y in 0..h {
                    let iy = y as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pad as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = (w as isize - shift).min(w as isize) as usize;
                    for x in x0..x1 {
                        let at = iy as usize * w + (x as isize + shift) as usize;
                        plane[at] = plane[at] + patch[y * w + x];
                    }
                }
            }
        }
    }
    img
}

pub(crate) fn conv_forward<T: Real>(x: &Array4<T>, weight: &Array4<T>, bias: &Array1<T>, pad: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let (o, _, k, _) = weight.dim();
    let w2 = weight.view().into_shape_with_order((o, c * k * k)).expect("contiguous weights");
    let mut out = Array4::zeros((n, o, h, w));
    for i in 0..n {
        let cols = im2col(x.index_axis(Axis(0), i), k, pad);
        let mut y = out.index_axis_mut(Axis(0), i).into_shape_with_order((o, h * w)).expect("fresh array");
        general_mat_mul(T::one(), &w2, &cols, T::zero(), &mut y);
        for (mut row, &b) in y.outer_iter_mut().zip(bias) {
            row.mapv_inplace(|v| v + b);
        }
    }
    out
}

pub(crate) fn conv_backward<T: Real>(x: &Array4<T>, weight: &Array4<T>, dy: &Array4<T>, pad: usize) -> ConvGrads<T> {
    let (n, c, h, w) = x.dim();
    let (o, _, k, _) = weight.dim();
    let w2 = weight.view().into_shape_with_order((o, c * k * k)).expect("contiguous weights");
    let mut dw2 = Array2::zeros((o, c * k * k));
    let mut db = Array1::zeros(o);
    let mut dx = Array4::zeros((n, c, h, w));
    let mut dcols = Array2::zeros((c * k * k, h * w));
    for i in 0..n {
        let cols = im2col(x.index_axis(Axis(0), i), k, pad);
        let g = dy.index_axis(Axis(0), i).into_shape_with_order((o, h * w)).expect("standard layout");
        general_mat_mul(T::one(), &g, &cols.t(), T::one(), &mut dw2);
        for (acc, row) in db.iter_mut().zip(g.outer_iter()) {
            *acc = *acc + row.sum();
        }
        general_mat_mul(T::one(), &w2.t(), &g, T::zero(), &mut dcols);
        dx.index_axis_mut(Axis(0), i).assign(&col2im(dcols.view(), c, h, w, k, pad));
    }
    ConvGrads { input: dx, weight: dw2.into_shape_with_order((o, c, k, k)).expect("fresh array"), bias: db }
}

/// Shape-preserving 2D cross-correlation plus bias.
pub fn conv2d<T: Real>(input: &Tensor4<T>, weight: &Array4<T>, bias: &Array1<T>, padding: usize) -> Result<Tensor4<T>> {
    check_conv(input.data(), weight, bias, padding)?;
    let weight = weight.as_standard_layout().into_owned();
    Tensor4::new(conv_forward(input.data(), &weight, bias, padding))
}

/// Batch-norm affine parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T: Real> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Clone, Debug)]
pub(crate) struct BnCache<T: Real> {
    xhat: Array4<T>,
    invstd: Array1<T>,
    mode: BnMode,
}

/// Per-channel batch statistics: biased mean, unbiased variance.
pub(crate) struct BnStats {
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

pub struct BnGrads<T: Real> {
    pub input: Array4<T>,
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn forward(&self, x: &Array4<T>, mode: BnMode) -> (Array4<T>, BnCache<T>, Option<BnStats>) {
        let (n, c, h, w) = x.dim();
        let count = n * h * w;
        let mut xhat = Array4::zeros(x.dim());
        let mut invstd = Array1::zeros(c);
        let mut stats = BnStats { mean: vec![0.0; c], var_unbiased: vec![0.0; c] };
        for ch in 0..c {
            let xs = x.index_axis(Axis(1), ch);
            let (mean, var) = match mode {
                BnMode::Train => {
                    let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / count as f64;
                    let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count as f64;
                    stats.mean[ch] = mean;
                    stats.var_unbiased[ch] = if count > 1 { var * count as f64 / (count - 1) as f64 } else { var };
                    (mean, var)
                }
                BnMode::Eval => (self.running_mean[ch].as_f64(), self.running_var[ch].as_f64()),
            };
            let inv = 1.0 / (var + self.eps).sqrt();
            invstd[ch] = T::from_f64_lossy(inv);
            let (m, i) = (T::from_f64_lossy(mean), T::from_f64_lossy(inv));
            ndarray::Zip::from(xhat.index_axis_mut(Axis(1), ch)).and(&xs).for_each(|o, &v| *o = (v - m) * i);
        }
        let mut y = xhat.clone();
        for ch in 0..c {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|v| g * v + b);
        }
        let stats = (mode == BnMode::Train).then_some(stats);
        (y, BnCache { xhat, invstd, mode }, stats)
    }

    pub(crate) fn update_running(&mut self, stats: &BnStats) {
        let m = self.momentum;
        for ch in 0..self.channels() {
            let rm = self.running_mean[ch].as_f64();
            let rv = self.running_var[ch].as_f64();
            self.running_mean[ch] = T::from_f64_lossy((1.0 - m) * rm + m * stats.mean[ch]);
            self.running_var[ch] = T::from_f64_lossy((1.0 - m) * rv + m * stats.var_unbiased[ch]);
        }
    }

    pub(crate) fn backward(&self, cache: &BnCache<T>, dy: &Array4<T>) -> BnGrads<T> {
        let (n, c, h, w) = dy.dim();
        let count = (n * h * w) as f64;
        let mut dx = Array4::zeros(dy.dim());
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for ch in 0..c {
            let g = dy.index_axis(Axis(1), ch);
            let xh = cache.xhat.index_axis(Axis(1), ch);
            let sum_dy: f64 = g.iter().map(|v| v.as_f64()).sum();
            let sum_dy_xhat: f64 = g.iter().zip(xh.iter()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            dbeta[ch] = T::from_f64_lossy(sum_dy);
            dgamma[ch] = T::from_f64_lossy(sum_dy_xhat);
            let scale = self.gamma[ch] * cache.invstd[ch];
            let mut out = dx.index_axis_mut(Axis(1), ch);
            match cache.mode {
                BnMode::Eval => ndarray::Zip::from(&mut out).and(&g).for_each(|o, &d| *o = scale * d),
                BnMode::Train => {
                    let mean_dy = T::from_f64_lossy(sum_dy / count);
                    let mean_dy_xhat = T::from_f64_lossy(sum_dy_xhat / count);
                    ndarray::Zip::from(&mut out)
                        .and(&g)
                        .and(&xh)
                        .for_each(|o, &d, &x| *o = scale * (d - mean_dy - x * mean_dy_xhat));
                }
            }
        }
        BnGrads { input: dx, gamma: dgamma, beta: dbeta }
    }
}

/// Batch normalization. Train mode normalizes with batch statistics and updates the
/// running statistics; eval mode uses the running statistics.
pub fn batchnorm<T: Real>(input: &Tensor4<T>, params: &mut BatchNorm<T>, mode: BnMode) -> Result<Tensor4<T>> {
    if input.dim().1 != params.channels() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, batch norm has {}",
            input.dim().1,
            params.channels()
        )));
    }
    let (y, _, stats) = params.forward(input.data(), mode);
    if let Some(stats) = stats {
        params.update_running(&stats);
    }
    Tensor4::new(y)
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Array4<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Gate `dy` by the sign of the ReLU output.
pub(crate) fn relu_backward<T: Real>(out: &Array4<T>, dy: &mut Array4<T>) {
    ndarray::Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
}

/// Adaptive pooling window `[start, end)` for output cell `i` of `out` cells over `len` inputs.
fn window(i: usize, out: usize, len: usize) -> (usize, usize) {
    ((i * len) / out, ((i + 1) * len).div_ceil(out))
}

pub(crate) fn pool_forward<T: Real>(x: &Array4<T>, oh: usize, ow: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::zeros((n, c, oh, ow));
    for i in 0..oh {
        let (y0, y1) = window(i, oh, h);
        for j in 0..ow {
            let (x0, x1) = window(j, ow, w);
            let inv = T::from_f64_lossy(1.0 / ((y1 - y0) * (x1 - x0)) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let sum = x.slice(s![b, ch, y0..y1, x0..x1]).sum();
                    out[[b, ch, i, j]] = sum * inv;
                }
            }
        }
    }
    out
}

pub(crate) fn pool_backward<T: Real>(dy: &Array4<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c, oh, ow) = dy.dim();
    let mut dx = Array4::zeros((n, c, h, w));
    for i in 0..oh {
        let (y0, y1) = window(i, oh, h);
        for j in 0..ow {
            let (x0, x1) = window(j, ow, w);
            let inv = T::from_f64_lossy(1.0 / ((y1 - y0) * (x1 - x0)) as f64);
            for b in 0..n {
                for ch in 0..c {
                    let g = dy[[b, ch, i, j]] * inv;
                    dx.slice_mut(s![b, ch, y0..y1, x0..x1]).mapv_inplace(|v| v + g);
                }
            }
        }
    }
    dx
}

/// Adaptive average pooling to `target_h x target_w`.
pub fn downsample_to<T: Real>(input: &Tensor4<T>, target_h: usize, target_w: usize) -> Result<Tensor4<T>> {
    let (_, _, h, w) = input.dim();
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::InvalidDimension(format!("cannot pool {h}x{w} down to {target_h}x{target_w}")));
    }
    Tensor4::new(pool_forward(input.data(), target_h, target_w))
}
