//! Scalar-generic tensor engine with reverse-mode automatic differentiation.
//!
//! The crate is built around three pieces:
//!
//! * [`Tensor`] — a dense row-major n-d array over any [`Scalar`] element type,
//! * [`Graph`] — a tape that records every operation eagerly and can replay the
//!   chain rule backwards in a fixed, deterministic order,
//! * a small library of operations (convolutions, bilinear sampling, softmax,
//!   pointwise math, reductions) with hand-written backward passes.
//!
//! Everything is generic over the element type so the same network code runs in
//! `f32` for training and inference and in `f64` for finite-difference gradient
//! checks. The [`Tensor32`]/[`Tensor64`] and [`Graph32`]/[`Graph64`] aliases
//! cover the two instantiations used in practice.
//!
//! Determinism is a hard requirement for the codecs built on top of this crate:
//! every kernel iterates in a fixed order, reductions never reassociate based
//! on data, and the tape replays gradients in reverse insertion order. Running
//! the same graph twice on the same machine produces bit-identical values and
//! gradients.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod math;
pub mod ops;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::CoreError;
pub use graph::{Graph, VarId};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor used for training and inference.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor used for gradient checks and oracles.
pub type Tensor64 = Tensor<f64>;
/// Single-precision autodiff tape.
pub type Graph32 = Graph<f32>;
/// Double-precision autodiff tape.
pub type Graph64 = Graph<f64>;
