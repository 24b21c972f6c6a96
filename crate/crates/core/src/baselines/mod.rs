//! Comparison architectures: a temporal CNN, a bidirectional LSTM and a
//! patch-token transformer.

pub mod cnn;
pub mod eegxf;
pub mod lstm;

pub use cnn::Cnn;
pub use eegxf::{positional_encoding, Eegxf};
pub use lstm::{lstm_layer, Lstm};

use crate::model::Model;

/// Number of trainable scalars in a model; running statistics are excluded.
pub fn count_params(model: &Model) -> usize {
    model.count_params()
}
