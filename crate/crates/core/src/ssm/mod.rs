//! State-space primitives: zero-order-hold discretization, recurrent scan,
//! convolution kernels, and the selective (input-dependent) variant used by
//! Mamba blocks.

mod block;
mod lti;
mod selective;

pub use block::{MambaBlock, MambaBlockConfig};
pub use lti::{
    apply_kernel, build_kernel, discretize_zoh, scan_recurrent, ContinuousSsm, DiscreteSsm, Kernel,
};
pub use selective::{selective_params, selective_scan, SelectiveWeights};
