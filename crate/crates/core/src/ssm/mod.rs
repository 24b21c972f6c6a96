//! Diagonal state-space layers: parameters, discretization, the recurrence
//! evaluated sequentially or by associative scan, the equivalent convolution
//! kernel, and their differentiable tape versions.

pub mod classifier;
pub mod ops;
pub mod params;
pub mod s4;
pub mod scan;

pub use ops::{causal_conv, s4_kernel_op, s5_scan, SsmVars};
pub use params::{init_s5, init_s5_with, DiscreteS5, S5LayerParams, ZohTerms, DT_MAX, DT_MIN};
pub use s4::{s4_forward, s4_kernel};
pub use scan::{
    compose, inclusive_scan, parallel_scan, scan_constant, sequential_recurrence, Affine,
    SCAN_CHUNK,
};
