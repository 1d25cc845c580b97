//! Desk-scale multi-task mask-diffusion for video segmentation.
//!
//! The pipeline denoises a latent mask conditioned on a spatiotemporal prior
//! (per-frame features fused with temporally averaged features of the
//! preceding frames), supervises segmentation jointly with classification and
//! box regression, and self-supervises the temporal branch by reconstructing
//! the target frame under an adversarial critic. Everything runs in `f64` on
//! the CPU and is bit-reproducible for a fixed seed.

pub mod codec;
pub mod data;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod schedule;
pub mod seeds;

pub use error::{Error, Result};
