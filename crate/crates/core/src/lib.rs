//! Texture transform attention inpainting engine.
//!
//! A small U-Net generator with gated convolutions, a dilated bottleneck and
//! texture transform attention on every skip connection, trained against a
//! spectral-normalized patch discriminator with reconstruction, hinge
//! adversarial, perceptual and style losses.

pub mod attention;
pub mod error;
pub mod data;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};
