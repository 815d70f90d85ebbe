//! Unsupervised domain adaptation by class-conditional sliced-Wasserstein
//! alignment.
//!
//! A shared encoder maps source and target samples into an embedding space
//! where a classifier head is trained on labeled source data. Confident
//! target predictions become pseudo-labels, and the encoder is updated to
//! shrink the sliced Wasserstein distance between source and pseudo-labeled
//! target embeddings of the same class.
//!
//! - [`numerics`]: tensors, dense/ReLU layers, softmax cross-entropy, Adam,
//!   finite-difference checks
//! - [`swd`]: projections, 1D Wasserstein, the sliced estimator and its gradient
//! - [`model`]: encoder, classifier, parameter files
//! - [`adapt`]: pre-training, pseudo-labels, the alignment loop, evaluation
//! - [`data`]: synthetic shift generators, IDX, preprocessing, augmentation, CSV

pub mod adapt;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod swd;

pub use adapt::{
    build_pseudo_labels, conditional_swd_loss, dacad_train, evaluate, pretrain, source_only_train, train, Accuracy,
    Mode, PseudoLabelSet, TrainConfig, TrainLog,
};
pub use error::{Error, Result};
pub use model::{load_params, save_params, Architecture, ModelParams};
pub use numerics::Tensor;
pub use swd::{swd_estimate, wasserstein_1d, Normalization, ProjectionSet, SwdConfig};
