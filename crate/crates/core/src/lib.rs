//! Forward-gradient guided diffusion at desk scale.
//!
//! A self-contained laboratory for steering a toy denoising diffusion model
//! with training-free guidance. The crate provides:
//!
//! - [`numerics`]: dense `f64` tensors, counter-based seeded randomness, and
//!   a live-scalar memory meter;
//! - [`autodiff`]: a dual-number forward engine (JVP), a recording-tape
//!   reverse engine (VJP), and a finite-difference oracle over one shared
//!   op set;
//! - [`diffusion`]: noise schedules, forward noising, ancestral and
//!   deterministic reverse steps, Tweedie estimation, and the differentiable
//!   sample-to-zero unroll;
//! - [`model`]: the two-hidden-layer MLP denoiser and its training loop;
//! - [`guidance`]: objectives, gradient-guess constructors, the
//!   forward-gradient guidance loop, and the reverse-mode baselines;
//! - [`eval`]: the moons dataset, guidance-quality metrics, and the memory
//!   benchmark.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{MemMeter, MemStats, RngState, Tensor};
