//! Reverse-mode automatic differentiation over `ndarray` in `f64`.
//!
//! The engine is deliberately small and strictly sequential: every op runs
//! single-threaded and gradients are accumulated in a fixed structural order,
//! so repeated runs with identical inputs produce bit-identical values and
//! gradients. That property is load-bearing for reproducible training and is
//! verified by the crate's tests.
//!
//! A [`Tensor`] is a cheap handle onto an immutable value plus the recipe that
//! produced it. Calling [`Tensor::backward`] on a scalar walks the recorded
//! graph once and deposits gradients on every leaf created with
//! [`Tensor::leaf`]. Graphs are one-shot: build, differentiate, drop.

mod conv;
mod norm;
mod shape;
mod tensor;

pub mod check;

pub use tensor::Tensor;
