//! Spatiotemporal regression from ultrasound tongue video to spectral
//! vectors.
//!
//! The crate provides 3D convolution, max pooling, dense, dropout, LSTM,
//! bidirectional LSTM and Convolutional LSTM layers with hand-written
//! gradients, declarative model stacks, a training loop, and the
//! preprocessing chain that turns raw scanline recordings into windowed
//! regression samples. See the `examples/` directory for one runnable
//! program per capability, and the `uti` binary for the command-line front
//! end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Rng, Tensor};
