//! Minimal f64 tensor machinery with hand-written backward passes.

mod layers;
pub mod ops;
mod params;
mod tensor;

pub use layers::{Conv2d, ConvOptions, ResidualCache, ResidualUnit};
pub use ops::ConvGeometry;
pub use params::{Grads, Init, Param, ParamId, ParamSet};
pub use tensor::Tensor;
