//! Minimal dense-tensor and reverse-mode differentiation core.
//!
//! Everything the encoder-decoder needs lives here: a row-major `f32`
//! [`Tensor`], a named [`ParamStore`], a single-use [`Graph`] tape with the
//! transformer layer set (embedding gather, linear, layer norm, multi-head
//! attention over packed blocks, GELU, dropout, cross-entropy, BCE), the
//! AdamW optimizer and a linear-warmup learning-rate schedule.
//!
//! Reductions (layer-norm statistics, softmax denominators, losses) are
//! accumulated in `f64` in a fixed left-to-right order. Matrix products go
//! through `matrixmultiply`'s single-threaded sgemm, whose per-element
//! accumulation order does not depend on the other rows of the operands.

mod error;
mod gemm;
mod graph;
mod optim;
mod params;
mod rng;
mod tensor;

pub mod gradcheck;

pub use error::{NumericsError, Result};
pub use gemm::{matmul, matmul_nt, matmul_tn};
pub use graph::{AttentionSpec, AttnBlock, Graph, Var};
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use rng::{counter_uniform, mix64};
pub use tensor::Tensor;
