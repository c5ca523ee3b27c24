//! Minimal differentiable-computation layer.
//!
//! Gradients are written by hand per op rather than recorded on a tape: the
//! HQARF networks are fixed feed-forward chains, so each layer simply keeps
//! its input and maps an upstream gradient back through itself. The
//! [`gradcheck`] harness verifies every backward pass against central finite
//! differences in `f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{Conv1d, ConvTranspose1d, Linear, Param, Parameterized};
pub use optim::{AdamConfig, OptimState};
pub use tensor::{Real, Tensor};

/// Slope used by every hidden leaky-ReLU in the networks.
pub const LEAKY_SLOPE: f32 = 0.01;
