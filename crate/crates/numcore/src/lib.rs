//! `numcore`: the array engine underneath the eegbench models.
//!
//! * [`NdArray`]: dense real or complex arrays.
//! * [`signal`]: direct/FFT convolution and softmax.
//! * [`Tape`]: reverse-mode gradients over a fixed set of tensor ops.
//! * [`grad_check`]: central-difference verification of tape gradients.

pub mod array;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod signal;
pub mod tape;

pub use array::{ComplexArray, DType, Element, NdArray};
pub use error::{NumError, Result};
pub use gradcheck::grad_check;
pub use num_complex::Complex64;
pub use signal::{conv1d_valid, fft_circular_convolve, softmax};
pub use tape::{Gradients, Tape, Var};
