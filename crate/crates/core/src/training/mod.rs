//! Optimizer, datasets, checkpoints and the MNIST experiment runners.

pub mod checkpoint;
pub mod data;
pub mod experiments;
pub mod sgd;

pub use data::{load_mnist_idx, subsample, Dataset, Mnist, Split};
pub use experiments::{
    run_autoencoder_experiment, run_classifier_experiment, Arch, AutoencoderConfig, AutoencoderResult,
    ClassifierConfig, ClassifierReport,
};
pub use sgd::{sgd_train, EpochRecord, LrSchedule, Objective, TrainConfig, TrainLog};
