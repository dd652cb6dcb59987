use ndarray::{Array1, Array2, Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv_backward, conv_forward, pool_backward, pool_forward, relu_backward, relu_inplace, BatchNorm, BnCache, BnMode,
};
use super::Tensor4;
use crate::holo::LaserPowerMatrix;
use crate::{Error, Real, Result};

/// Channels in every hidden convolution.
pub const CHANNELS: usize = 24;
/// Spatial size after each block, clamped to the input size for small images.
pub const STAGES: [usize; 3] = [100, 10, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T: Real> {
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub pad: usize,
}

impl<T: Real> Conv<T> {
    fn he_uniform(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> Self {
        let bound = (6.0 / (inp * k * k) as f64).sqrt();
        let weight = Array4::from_shape_fn((out, inp, k, k), |_| T::from_f64_lossy(rng.random_range(-bound..bound)));
        Self { weight, bias: Array1::zeros(out), pad: k / 2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T: Real> {
    pub conv_a: Conv<T>,
    pub bn_a: BatchNorm<T>,
    pub conv_b: Conv<T>,
    pub bn_b: BatchNorm<T>,
    pub stage: usize,
}

struct BlockTrace<T: Real> {
    input: Array4<T>,
    bn_a: BnCache<T>,
    act_a: Array4<T>,
    bn_b: BnCache<T>,
    act_b: Array4<T>,
}

/// Intermediate activations kept for the backward pass.
pub struct Trace<T: Real> {
    blocks: Vec<BlockTrace<T>>,
    head_input: Array4<T>,
}

/// Power-matrix regressor: three (conv, BN, ReLU) x2 + pool blocks and a 1x1 head.
///
/// Output cell `[f, p]` of the 3x3 map is the power of primary `p` in subframe `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorModel<T: Real = f32> {
    pub blocks: Vec<Block<T>>,
    pub head: Conv<T>,
    training: bool,
}

/// One gradient array per parameter, in [`EstimatorModel::param_names`] order.
pub type Gradients<T> = Vec<ArrayD<T>>;

impl<T: Real> EstimatorModel<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(STAGES.len());
        let mut inp = 3;
        for &stage in &STAGES {
            let conv_a = Conv::he_uniform(&mut rng, CHANNELS, inp, 3);
            let conv_b = Conv::he_uniform(&mut rng, CHANNELS, CHANNELS, 3);
            blocks.push(Block { conv_a, bn_a: BatchNorm::new(CHANNELS), conv_b, bn_b: BatchNorm::new(CHANNELS), stage });
            inp = CHANNELS;
        }
        let head = Conv::he_uniform(&mut rng, 1, CHANNELS, 1);
        Self { blocks, head, training: false }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.blocks.len() {
            for layer in ["a", "b"] {
                for p in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                    names.push(format!("block{b}.{layer}.{p}"));
                }
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn buffer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.blocks.len() {
            for layer in ["a", "b"] {
                for p in ["bn.running_mean", "bn.running_var"] {
                    names.push(format!("block{b}.{layer}.{p}"));
                }
            }
        }
        names
    }

    fn param_slots(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for block in &mut self.blocks {
            out.push(block.conv_a.weight.as_slice_mut().expect("owned"));
            out.push(block.conv_a.bias.as_slice_mut().expect("owned"));
            out.push(block.bn_a.gamma.as_slice_mut().expect("owned"));
            out.push(block.bn_a.beta.as_slice_mut().expect("owned"));
            out.push(block.conv_b.weight.as_slice_mut().expect("owned"));
            out.push(block.conv_b.bias.as_slice_mut().expect("owned"));
            out.push(block.bn_b.gamma.as_slice_mut().expect("owned"));
            out.push(block.bn_b.beta.as_slice_mut().expect("owned"));
        }
        out.push(self.head.weight.as_slice_mut().expect("owned"));
        out.push(self.head.bias.as_slice_mut().expect("owned"));
        out
    }

    fn buffer_slots(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for block in &mut self.blocks {
            for bn in [&mut block.bn_a, &mut block.bn_b] {
                out.push(bn.running_mean.as_slice_mut().expect("owned"));
                out.push(bn.running_var.as_slice_mut().expect("owned"));
            }
        }
        out
    }

    /// Parameters as `(shape, values)` in [`Self::param_names`] order.
    pub fn parameters(&self) -> Vec<ArrayD<T>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(block.conv_a.weight.clone().into_dyn());
            out.push(block.conv_a.bias.clone().into_dyn());
            out.push(block.bn_a.gamma.clone().into_dyn());
            out.push(block.bn_a.beta.clone().into_dyn());
            out.push(block.conv_b.weight.clone().into_dyn());
            out.push(block.conv_b.bias.clone().into_dyn());
            out.push(block.bn_b.gamma.clone().into_dyn());
            out.push(block.bn_b.beta.clone().into_dyn());
        }
        out.push(self.head.weight.clone().into_dyn());
        out.push(self.head.bias.clone().into_dyn());
        out
    }

    pub fn buffers(&self) -> Vec<ArrayD<T>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for bn in [&block.bn_a, &block.bn_b] {
                out.push(bn.running_mean.clone().into_dyn());
                out.push(bn.running_var.clone().into_dyn());
            }
        }
        out
    }

    /// Overwrite parameters (`buffers == false`) or running statistics from arrays
    /// whose shapes must match.
    pub fn load_arrays(&mut self, arrays: &[ArrayD<T>], buffers: bool) -> Result<()> {
        let shapes: Vec<Vec<usize>> =
            if buffers { self.buffers() } else { self.parameters() }.iter().map(|a| a.shape().to_vec()).collect();
        if arrays.len() != shapes.len() {
            return Err(Error::DimensionMismatch(format!("{} arrays for {} slots", arrays.len(), shapes.len())));
        }
        for (i, (a, shape)) in arrays.iter().zip(&shapes).enumerate() {
            if a.shape() != shape.as_slice() {
                return Err(Error::DimensionMismatch(format!("array {i} has shape {:?}, expected {shape:?}", a.shape())));
            }
        }
        let slots = if buffers { self.buffer_slots() } else { self.param_slots() };
        for (slot, a) in slots.into_iter().zip(arrays) {
            for (d, &s) in slot.iter_mut().zip(a.iter()) {
                *d = s;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|a| a.len()).sum()
    }

    /// Apply `update(param, grad)` to every parameter slice.
    pub fn update_params(&mut self, grads: &Gradients<T>, mut update: impl FnMut(usize, &mut [T], &[T]) -> Result<()>) -> Result<()> {
        for (i, (slot, g)) in self.param_slots().into_iter().zip(grads).enumerate() {
            update(i, slot, g.as_slice().expect("standard layout"))?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EstimatorModel<U> {
        let mut out = EstimatorModel::<U>::new(0);
        let conv = |a: &[ArrayD<T>]| a.iter().map(|x| x.mapv(|v| U::from_f64_lossy(v.as_f64()))).collect::<Vec<_>>();
        out.load_arrays(&conv(&self.parameters()), false).expect("same architecture");
        out.load_arrays(&conv(&self.buffers()), true).expect("same architecture");
        out.training = self.training;
        out
    }

    fn check_input(x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::DimensionMismatch(format!("estimator expects 3 channels, got {c}")));
        }
        if h < 3 || w < 3 {
            return Err(Error::InvalidDimension(format!("input {h}x{w} is smaller than the 3x3 output")));
        }
        Ok(())
    }

    /// Forward pass; returns `(N, 1, 3, 3)` raw outputs. In training mode batch
    /// statistics are used and the running statistics updated.
    pub fn forward(&mut self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        Self::check_input(input.data())?;
        let (out, _) = self.run(input.data(), self.training);
        Tensor4::new(out)
    }

    /// Forward pass that keeps activations for [`Self::backward`].
    pub fn forward_trace(&mut self, input: &Array4<T>) -> Result<(Array4<T>, Trace<T>)> {
        Self::check_input(input)?;
        Ok(self.run(input, self.training))
    }

    /// Eval-mode forward without touching any state.
    pub fn predict(&self, input: &Array4<T>) -> Result<Array4<T>> {
        Self::check_input(input)?;
        let mut x = input.clone();
        for block in &self.blocks {
            x = conv_forward(&x, &block.conv_a.weight, &block.conv_a.bias, block.conv_a.pad);
            x = block.bn_a.forward(&x, BnMode::Eval).0;
            relu_inplace(&mut x);
            x = conv_forward(&x, &block.conv_b.weight, &block.conv_b.bias, block.conv_b.pad);
            x = block.bn_b.forward(&x, BnMode::Eval).0;
            relu_inplace(&mut x);
            let (_, _, h, w) = x.dim();
            x = pool_forward(&x, block.stage.min(h), block.stage.min(w));
        }
        Ok(conv_forward(&x, &self.head.weight, &self.head.bias, self.head.pad))
    }

    fn run(&mut self, input: &Array4<T>, train: bool) -> (Array4<T>, Trace<T>) {
        let mode = if train { BnMode::Train } else { BnMode::Eval };
        let mut x = input.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let block_input = x;
            let c1 = conv_forward(&block_input, &block.conv_a.weight, &block.conv_a.bias, block.conv_a.pad);
            let (mut act_a, bn_a, stats) = block.bn_a.forward(&c1, mode);
            if let Some(s) = stats {
                block.bn_a.update_running(&s);
            }
            relu_inplace(&mut act_a);
            let c2 = conv_forward(&act_a, &block.conv_b.weight, &block.conv_b.bias, block.conv_b.pad);
            let (mut act_b, bn_b, stats) = block.bn_b.forward(&c2, mode);
            if let Some(s) = stats {
                block.bn_b.update_running(&s);
            }
            relu_inplace(&mut act_b);
            let (_, _, h, w) = act_b.dim();
            x = pool_forward(&act_b, block.stage.min(h), block.stage.min(w));
            traces.push(BlockTrace { input: block_input, bn_a, act_a, bn_b, act_b });
        }
        let out = conv_forward(&x, &self.head.weight, &self.head.bias, self.head.pad);
        (out, Trace { blocks: traces, head_input: x })
    }

    /// Parameter gradients given `d_out = dLoss/dOutput`, shape `(N, 1, 3, 3)`.
    pub fn backward(&self, trace: &Trace<T>, d_out: &Array4<T>) -> Gradients<T> {
        let head = conv_backward(&trace.head_input, &self.head.weight, d_out, self.head.pad);
        let mut dx = head.input;
        let mut per_block: Vec<Vec<ArrayD<T>>> = Vec::with_capacity(self.blocks.len());
        for (block, bt) in self.blocks.iter().zip(&trace.blocks).rev() {
            let (_, _, h, w) = bt.act_b.dim();
            let mut d = pool_backward(&dx, h, w);
            relu_backward(&bt.act_b, &mut d);
            let gb_bn = block.bn_b.backward(&bt.bn_b, &d);
            let gb_conv = conv_backward(&bt.act_a, &block.conv_b.weight, &gb_bn.input, block.conv_b.pad);
            let mut d = gb_conv.input;
            relu_backward(&bt.act_a, &mut d);
            let ga_bn = block.bn_a.backward(&bt.bn_a, &d);
            let ga_conv = conv_backward(&bt.input, &block.conv_a.weight, &ga_bn.input, block.conv_a.pad);
            dx = ga_conv.input;
            per_block.push(vec![
                ga_conv.weight.into_dyn(),
                ga_conv.bias.into_dyn(),
                ga_bn.gamma.into_dyn(),
                ga_bn.beta.into_dyn(),
                gb_conv.weight.into_dyn(),
                gb_conv.bias.into_dyn(),
                gb_bn.gamma.into_dyn(),
                gb_bn.beta.into_dyn(),
            ]);
        }
        per_block.reverse();
        let mut grads: Gradients<T> = per_block.into_iter().flatten().collect();
        grads.push(head.weight.into_dyn());
        grads.push(head.bias.into_dyn());
        grads
    }

    /// Eval-mode prediction for one `(3, H, W)` image, clamped to `[0, 1]`.
    pub fn estimate_powers(&self, image: &Array3<T>) -> Result<LaserPowerMatrix> {
        let x = image.clone().insert_axis(Axis(0));
        let out = self.predict(&x)?;
        let raw = out.index_axis(Axis(0), 0).index_axis(Axis(0), 0).mapv(|v| v.as_f64());
        Ok(LaserPowerMatrix::new(raw)?.clamped())
    }
}

/// `(N, 1, 3, 3)` network output to per-item 3x3 matrices in f64.
pub(crate) fn output_matrices<T: Real>(out: &Array4<T>) -> Vec<Array2<f64>> {
    out.outer_iter().map(|o| o.index_axis(Axis(0), 0).mapv(|v| v.as_f64())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn image(seed: u64, h: usize, w: usize) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((1, 3, h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn output_is_3x3_for_any_size() {
        let model = EstimatorModel::<f32>::new(1);
        for (h, w) in [(3, 3), (17, 40), (128, 128), (130, 101)] {
            let x = image(2, h, w).mapv(|v| v as f32);
            assert_eq!(model.predict(&x).unwrap().dim(), (1, 1, 3, 3));
        }
        assert!(model.predict(&Array4::zeros((1, 3, 2, 8))).is_err());
        assert!(model.predict(&Array4::zeros((1, 1, 8, 8))).is_err());
    }

    #[test]
    fn eval_is_batch_independent() {
        let model = EstimatorModel::<f32>::new(3).cast::<f64>();
        let a = image(4, 20, 20);
        let b = image(5, 20, 20);
        let batch = ndarray::concatenate(Axis(0), &[a.view(), b.view(), a.view()]).unwrap();
        let out = model.predict(&batch).unwrap();
        let single = model.predict(&a).unwrap();
        assert_eq!(out.index_axis(Axis(0), 0), out.index_axis(Axis(0), 2));
        for (x, y) in out.index_axis(Axis(0), 0).iter().zip(single.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seeded_he_uniform() {
        let a = EstimatorModel::<f32>::new(7);
        assert_eq!(a, EstimatorModel::<f32>::new(7));
        assert_ne!(a, EstimatorModel::<f32>::new(8));
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.blocks[0].conv_a.weight.iter().all(|w| w.abs() <= bound));
        assert!(a.head.bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.param_names().len(), a.parameters().len());
        assert_eq!(a.buffer_names().len(), a.buffers().len());
    }

    #[test]
    fn estimate_is_clamped() {
        let mut model = EstimatorModel::<f32>::new(9);
        model.head.bias.fill(5.0);
        let img = image(10, 16, 16).index_axis(Axis(0), 0).mapv(|v| v as f32);
        let l = model.estimate_powers(&img).unwrap();
        assert!(l.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn load_arrays_checks_shapes() {
        let mut m = EstimatorModel::<f32>::new(0);
        let mut params = m.parameters();
        params[0] = ArrayD::zeros(IxDyn(&[2, 2]));
        assert!(m.load_arrays(&params, false).is_err());
        assert!(m.load_arrays(&m.parameters()[..3], false).is_err());
    }
}
