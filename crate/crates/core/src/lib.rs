//! Shakeout training: the noise rule, its induced GLM regularizer, noisy
//! FC/conv layers with hand-written backward passes, MNIST experiments and
//! post-training weight analysis.

pub mod analysis;
pub mod error;
pub mod glm;
pub mod layers;
pub mod noise;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use glm::{GlmKind, GlmSpec, McEstimate, PropositionReport, RegularizerEval};
pub use layers::{ConvLayer, FcLayer, ForwardMode, Layer, Network};
pub use noise::{NoiseKind, ShakeoutParams, SwitchTensor};
pub use rng::RngStream;
pub use tensor::Tensor;
pub use training::{
    run_autoencoder_experiment, run_classifier_experiment, sgd_train, Arch, AutoencoderConfig, AutoencoderResult,
    ClassifierConfig, ClassifierReport, Dataset, LrSchedule, Mnist, Objective, Split, TrainConfig, TrainLog,
};
