//! Convolutional estimator of laser power matrices.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Architecture, CheckpointManifest, TensorEntry};
pub use layers::{batchnorm, conv2d, downsample_to, BatchNorm, BnGrads, BnMode, ConvGrads};
pub use loss::{bound_penalty, permutation_invariant_loss, permutation_invariant_loss_grad, InvariantLoss, PERMUTATIONS};
pub use model::{Block, Conv, EstimatorModel, Gradients, Trace, CHANNELS, STAGES};
pub use tensor::Tensor4;
pub use train::{
    item_losses, split_indices, train, train_from, train_observed, train_until, EpochLog, Split, TrainingConfig, TrainingItem, TrainingOutcome,
    TrainingState,
};
