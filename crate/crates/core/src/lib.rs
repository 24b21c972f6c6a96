//! EEG sequence-model benchmark: synthetic data, preprocessing, state-space
//! and baseline models, training and evaluation.

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod preprocess;
pub mod recording;
pub mod ssm;
pub mod training;

pub use error::{BenchError, Result};
pub use recording::{Recording, TaskLabel, NUM_CLASSES};
