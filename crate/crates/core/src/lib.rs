//! Label distribution learning for ordinal age estimation.
//!
//! The crate maps a fixed-size embedding (an i-vector, x-vector or any other
//! backbone output) to a probability distribution over an integer age grid and
//! reads the age off as the distribution's mean. Training combines three terms
//! on that distribution:
//!
//! - a KL divergence against a discretized Gaussian centred on the true age,
//! - an L1 penalty on the distance between the mean and the true age,
//! - the variance of the predicted distribution.
//!
//! Every gradient is derived by hand and checked against finite differences in
//! the test suites.
//!
//! # Layout
//!
//! - [`grid`]: age grids, label distributions, Gaussian targets and moments.
//! - [`losses`]: the three loss terms, their weighted sum and its gradient with
//!   respect to logits.
//! - [`model`]: the fully-connected head (forward and backward passes).
//! - [`trainer`]: mini-batch SGD with momentum and a plateau learning-rate
//!   schedule, plus the four method presets.
//! - [`inference`]: clip and utterance predictions, MAE and Pearson correlation.
//! - [`sample`]: labelled samples and the synthetic embedding generator.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints and
//! the command-line tool live in the `ldl-age` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod grid;
pub mod inference;
pub mod losses;
pub mod model;
pub mod sample;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{discretize_gaussian, AgeGrid, GaussianTarget, LabelDistribution};
pub use inference::{
    average_distribution, evaluate, evaluate_head, predict_clip, predict_utterance, ClipPrediction,
    EvalResult,
};
pub use losses::{
    hybrid_loss, hybrid_loss_and_gradient, hybrid_loss_gradient, kl_loss, l1_age_loss,
    variance_loss, HybridLossConfig, LossBreakdown,
};
pub use model::{Activation, DenseLayer, ForwardTrace, HeadGradient, LayerGradient, ModelHead};
pub use sample::{generate_synthetic, AgeDistribution, LabeledSample, SyntheticSpec};
pub use trainer::{
    fit, fit_with_validation, split_train_validation, EpochRecord, Method, MethodConfig,
    PlateauEvent, PlateauSchedule, StopReason, TrainConfig, TrainReport,
};
