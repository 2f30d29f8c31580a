//! Few-step diffusion distillation on synthetic 2-D data.
//!
//! A small reverse-mode autodiff engine drives a conditional noise-prediction
//! MLP (the teacher), which is then distilled into a few-step student with
//! backward distillation, a shifted reconstruction loss, and noise-corrected
//! sampling. Everything runs in `f64` on the CPU and is deterministic given
//! seeds.

pub mod autodiff;
pub mod data;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod teacher;

pub use error::{Error, Result};
