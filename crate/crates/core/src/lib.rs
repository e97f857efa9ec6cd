// Tensor ops are chained methods taking `self`, and `!(x > 0.0)` checks are
// written that way on purpose so NaN fails them.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod checkpoint;
pub mod classify;
pub mod clt;
pub mod dataio;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod ggeo;
pub mod metrics;
pub mod synth;
pub mod tensor;
pub mod topo;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
