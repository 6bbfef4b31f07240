//! Hardware-aware architecture search for diffusion transformers.
//!
//! The crate covers the whole desk-scale pipeline: a small reverse-mode
//! autograd engine, a configurable DiT backbone, the two-stage surrogate
//! search space, feature-wise block distillation, analytic cost and latency
//! models, multi-objective Bayesian optimization with exact 2-D EHVI, and
//! DDPM training/sampling on synthetic latents.

pub mod autograd;
pub mod cost;
pub mod diffusion;
pub mod distill;
pub mod dit;
pub mod error;
pub mod mobo;
pub mod optim;
pub mod rng;
pub mod space;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
