use chromaholo::estimator::{
    load_checkpoint, save_checkpoint, train, train_from, train_until, EstimatorModel, TrainingConfig, TrainingItem, TrainingState,
};
use chromaholo::holo::LaserPowerMatrix;
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Array3<f32> {
    Array3::from_shape_fn((3, size, size), |_| rng.random_range(0.0..1.0))
}

fn items(count: usize, size: usize, seed: u64) -> Vec<TrainingItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let image = random_image(&mut rng, size);
            // powers loosely tied to channel means so there is something to learn
            let means: Vec<f64> = (0..3).map(|c| image.index_axis(ndarray::Axis(0), c).mean().unwrap() as f64).collect();
            let powers = Array2::from_shape_fn((3, 3), |(f, p)| ((means[p] + 0.2 * f as f64) % 1.0).clamp(0.0, 1.0));
            TrainingItem { id: format!("item{i}"), image, powers: LaserPowerMatrix::new(powers).unwrap() }
        })
        .collect()
}

#[test]
fn network_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = EstimatorModel::<f32>::new(11).cast::<f64>();
    model.set_training(true);
    let x = Array4::from_shape_fn((2, 3, 32, 32), |_| rng.random_range(0.0..1.0));
    let probe = Array4::from_shape_fn((2, 1, 3, 3), |_| rng.random_range(-1.0..1.0));
    let (_, trace) = model.forward_trace(&x).unwrap();
    let grads = model.backward(&trace, &probe);

    let objective = |m: &mut EstimatorModel<f64>| -> f64 {
        let (out, _) = m.forward_trace(&x).unwrap();
        (out * &probe).sum()
    };
    let params = model.parameters();
    let eps = 1e-6;
    let mut checked = 0;
    for (slot, p) in params.iter().enumerate() {
        for &idx in &[0, p.len() / 2, p.len() - 1] {
            let mut shifted = params.clone();
            shifted[slot].as_slice_mut().unwrap()[idx] += eps;
            let mut up = model.clone();
            up.load_arrays(&shifted, false).unwrap();
            shifted[slot].as_slice_mut().unwrap()[idx] -= 2.0 * eps;
            let mut down = model.clone();
            down.load_arrays(&shifted, false).unwrap();
            let fd = (objective(&mut up) - objective(&mut down)) / (2.0 * eps);
            let analytic = grads[slot].as_slice().unwrap()[idx];
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(rel <= 1e-3 || (fd - analytic).abs() < 1e-7, "param {slot}[{idx}]: fd {fd:e} analytic {analytic:e}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * params.len());
}

#[test]
fn single_pair_is_memorized() {
    let data = items(1, 32, 1);
    let config = TrainingConfig { epochs: 200, batch_size: 1, val_fraction: 0.0, seed: 2, ..Default::default() };
    let outcome = train(&data, &config).unwrap();
    let last = outcome.state.log.last().unwrap();
    assert_eq!(outcome.state.log.len(), 200);
    assert!(outcome.state.log.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_none()));
    assert!(last.train_loss <= 1e-3, "final training loss {}", last.train_loss);
}

#[test]
fn training_improves_every_training_item_and_is_deterministic() {
    let data = items(12, 24, 3);
    let config = TrainingConfig { epochs: 15, batch_size: 4, val_fraction: 0.25, seed: 9, ..Default::default() };
    let a = train(&data, &config).unwrap();
    let b = train(&data, &config).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.state.log.len(), 15);
    let after = chromaholo::estimator::item_losses(&a.state.model, &data, &a.split.train, 4).unwrap();
    let improved = after.iter().zip(&a.initial_train_losses).filter(|(x, y)| x < y).count();
    assert_eq!(improved, after.len(), "after {after:?} before {:?}", a.initial_train_losses);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = items(6, 16, 4);
    let config = TrainingConfig { epochs: 4, batch_size: 4, val_fraction: 0.2, seed: 1, ..Default::default() };
    let straight = train(&data, &config).unwrap().state;

    let dir = tempfile::tempdir().unwrap();
    let half = train_until(TrainingState::fresh(config.seed), &data, &config, 2).unwrap().state;
    assert_eq!(half.epoch, 2);
    save_checkpoint(dir.path(), &half, &config).unwrap();
    let (loaded, cfg) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(cfg, config);
    let resumed = train_from(loaded, &data, &config).unwrap().state;
    assert_eq!(resumed.log.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert_eq!(resumed, straight);
}
