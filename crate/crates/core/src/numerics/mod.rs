//! Dense tensor arithmetic, seeded randomness, and allocation instrumentation.

pub mod fmath;
pub mod meter;
pub mod rng;
pub mod tensor;

pub use meter::{AllocClass, MemMeter, MemStats};
pub use rng::RngState;
pub use tensor::Tensor;
