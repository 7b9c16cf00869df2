//! Minimal deterministic tensor and layer substrate used by the codec and
//! the perceptual feature extractor.

pub mod adam;
pub mod conv;
pub mod gemm;
pub mod layers;
mod scalar;
mod tensor;

pub use adam::Adam;
pub use conv::{Conv2d, ConvGeometry, ConvTranspose2d};
pub use layers::{Gdn, Grads, Layer, Sequential, Tape};
pub use scalar::Real;
pub use tensor::Tensor;
