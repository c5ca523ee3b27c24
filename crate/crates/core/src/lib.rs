//! HQARF: hierarchical vector-quantized learned compression for complex
//! baseband RF frames, with the synthetic six-class modulation dataset, the
//! staged training pipeline, rate accounting, an SVD energy bound and a
//! modulation-recognition classifier for measuring task utility.

// Index loops read closer to the math in the kernels; negated comparisons
// are how the validators reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod codec;
pub mod error;
pub mod hae;
pub mod modrec;
pub mod ndiff;
pub mod sigsynth;
pub mod training;
pub mod vq;

pub use error::{Error, Result};
