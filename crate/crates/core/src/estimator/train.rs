use ndarray::{Array3, Array4, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::permutation_invariant_loss_grad;
use super::model::{output_matrices, EstimatorModel};
use crate::holo::{linear_decay, Adam, AdamState, LaserPowerMatrix};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the items held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 40, lr_start: 0.002, lr_end: 0.0005, batch_size: 8, seed: 0, val_fraction: 0.1 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!("validation fraction {} not in [0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    /// Learning rate for `epoch`, linear from `lr_start` at epoch 0 to `lr_end` at the last.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        linear_decay(epoch, self.epochs, self.lr_start, self.lr_end).unwrap_or(self.lr_end)
    }
}

/// One (image, optimized powers) pair.
#[derive(Clone, Debug)]
pub struct TrainingItem {
    pub id: String,
    /// `(3, H, W)` linear intensity.
    pub image: Array3<f32>,
    pub powers: LaserPowerMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when nothing is held out.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

/// Model plus optimizer state; enough to resume training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub model: EstimatorModel<f32>,
    pub adam: Vec<AdamState<f32>>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainingState {
    pub fn fresh(seed: u64) -> Self {
        let model = EstimatorModel::new(seed);
        let adam = model.parameters().iter().map(|p| AdamState::new(p.len())).collect();
        Self { model, adam, epoch: 0, log: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Deterministic hold-out split for `n` items.
pub fn split_indices(n: usize, config: &TrainingConfig) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let mut n_val = (n as f64 * config.val_fraction).round() as usize;
    if config.val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Split { train, val }
}

pub struct TrainingOutcome {
    pub state: TrainingState,
    pub split: Split,
    /// Validation loss of the model as it was handed in (the untrained model on a fresh run).
    pub initial_val_loss: Option<f64>,
    /// Per-item loss on the training items before this run, in `split.train` order.
    pub initial_train_losses: Vec<f64>,
}

fn batch_input(items: &[TrainingItem], idx: &[usize]) -> Array4<f32> {
    let (c, h, w) = items[idx[0]].image.dim();
    let mut x = Array4::zeros((idx.len(), c, h, w));
    for (b, &i) in idx.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), b).assign(&items[i].image);
    }
    x
}

/// Eval-mode loss of every listed item.
pub fn item_losses(model: &EstimatorModel<f32>, items: &[TrainingItem], idx: &[usize], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch.max(1)) {
        let pred = model.predict(&batch_input(items, chunk))?;
        for (est, &i) in output_matrices(&pred).iter().zip(chunk) {
            out.push(permutation_invariant_loss_grad(est.view(), items[i].powers.values().view())?.value);
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn check_items(items: &[TrainingItem]) -> Result<()> {
    let first = items.first().ok_or(Error::EmptyDataset)?;
    for item in items {
        if item.image.dim() != first.image.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} is {:?}, expected {:?}",
                item.id,
                item.image.dim(),
                first.image.dim()
            )));
        }
        if item.powers.subframes() != 3 || item.powers.primaries() != 3 {
            return Err(Error::DimensionMismatch(format!("{}: power matrix must be 3x3", item.id)));
        }
        item.powers.check_range()?;
    }
    Ok(())
}

/// One optimizer step on a mini-batch; returns the batch mean loss.
fn train_step(state: &mut TrainingState, items: &[TrainingItem], idx: &[usize], lr: f64, adam: &Adam) -> Result<f64> {
    let x = batch_input(items, idx);
    state.model.set_training(true);
    let (out, trace) = state.model.forward_trace(&x)?;
    let n = idx.len() as f64;
    let mut d_out = Array4::<f32>::zeros(out.dim());
    let mut total = 0.0;
    for (b, (est, &i)) in output_matrices(&out).iter().zip(idx).enumerate() {
        let l = permutation_invariant_loss_grad(est.view(), items[i].powers.values().view())?;
        total += l.value;
        for ((r, c), g) in l.grad.indexed_iter() {
            d_out[[b, 0, r, c]] = (g / n) as f32;
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite { step: state.epoch, loss });
    }
    let grads = state.model.backward(&trace, &d_out);
    let adam_states = &mut state.adam;
    state.model.update_params(&grads, |i, p, g| adam.step(p, g, &mut adam_states[i], lr))?;
    Ok(loss)
}

/// Train from scratch with `config.seed` driving initialization, split and shuffling.
pub fn train(items: &[TrainingItem], config: &TrainingConfig) -> Result<TrainingOutcome> {
    train_from(TrainingState::fresh(config.seed), items, config)
}

/// Continue training `state` until `config.epochs` epochs have completed.
pub fn train_from(state: TrainingState, items: &[TrainingItem], config: &TrainingConfig) -> Result<TrainingOutcome> {
    train_until(state, items, config, config.epochs)
}

/// Like [`train_from`] but stop once `stop` epochs are done; the learning-rate
/// schedule still spans `config.epochs`, so a later resume picks up seamlessly.
pub fn train_until(state: TrainingState, items: &[TrainingItem], config: &TrainingConfig, stop: usize) -> Result<TrainingOutcome> {
    train_observed(state, items, config, stop, &mut |_| Ok(()))
}

/// [`train_until`] calling `on_epoch` with the state after every completed epoch.
pub fn train_observed(
    mut state: TrainingState,
    items: &[TrainingItem],
    config: &TrainingConfig,
    stop: usize,
    on_epoch: &mut dyn FnMut(&TrainingState) -> Result<()>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    check_items(items)?;
    if state.adam.len() != state.model.parameters().len() {
        return Err(Error::DimensionMismatch("optimizer state does not match the model".into()));
    }
    let split = split_indices(items.len(), config);
    let batch = config.batch_size;
    let initial_val_loss = mean(&item_losses(&state.model, items, &split.val, batch)?);
    let initial_train_losses = item_losses(&state.model, items, &split.train, batch)?;
    let adam = Adam::default();

    while state.epoch < stop.min(config.epochs) {
        let epoch = state.epoch;
        let lr = config.lr_at(epoch);
        let mut order = split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(batch) {
            losses.push(train_step(&mut state, items, chunk, lr, &adam)?);
        }
        state.model.set_training(false);
        let train_loss = mean(&losses).unwrap_or(f64::NAN);
        let val_loss = mean(&item_losses(&state.model, items, &split.val, batch)?);
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: epoch, loss: v });
        }
        match val_loss {
            Some(v) => log::info!("epoch {epoch}: train {train_loss:.6} val {v:.6} lr {lr:.6}"),
            None => log::info!("epoch {epoch}: train {train_loss:.6} lr {lr:.6}"),
        }
        state.log.push(EpochLog { epoch, train_loss, val_loss, lr });
        state.epoch += 1;
        on_epoch(&state)?;
    }
    state.model.set_training(false);
    Ok(TrainingOutcome { state, split, initial_val_loss, initial_train_losses })
}

pub(crate) fn cast_arrays<T: Real>(arrays: &[ArrayD<T>]) -> Vec<ArrayD<f32>> {
    arrays.iter().map(|a| a.mapv(|v| v.as_f64() as f32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        assert!(TrainingConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { lr_end: 0.01, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let c = TrainingConfig::default();
        assert_eq!(c.lr_at(0), 0.002);
        assert!((c.lr_at(39) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let c = TrainingConfig { val_fraction: 0.2, seed: 4, ..Default::default() };
        let s = split_indices(20, &c);
        assert_eq!(s, split_indices(20, &c));
        assert_eq!(s.val.len(), 4);
        assert!(s.val.iter().all(|v| !s.train.contains(v)));
        let one = split_indices(1, &c);
        assert_eq!((one.train.len(), one.val.len()), (1, 0));
    }

    #[test]
    fn empty_and_mismatched_inputs_rejected() {
        assert!(matches!(train(&[], &TrainingConfig::default()), Err(Error::EmptyDataset)));
        let a = TrainingItem { id: "a".into(), image: Array3::zeros((3, 8, 8)), powers: LaserPowerMatrix::identity(3) };
        let b = TrainingItem { id: "b".into(), image: Array3::zeros((3, 8, 9)), powers: LaserPowerMatrix::identity(3) };
        assert!(train(&[a.clone(), b], &TrainingConfig::default()).is_err());
        let bad = TrainingItem { powers: LaserPowerMatrix::new(Array2::from_elem((3, 3), 1.5)).unwrap(), ..a };
        assert!(train(&[bad], &TrainingConfig::default()).is_err());
    }
}
