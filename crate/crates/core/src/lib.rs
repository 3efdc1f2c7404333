//! Prompt-conditioned interactive matting at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, visual-prompt
//! encoders, masked and prompt-driven attention, a miniature one-step U-Net
//! with a latent codec, a synthetic compositing data generator, the standard
//! matting metrics, and the training/evaluation loop that ties them together.

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod params;
pub mod prompt;
pub mod tensor;
pub mod train;
pub mod unet;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
