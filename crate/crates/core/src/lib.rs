//! Restoration of degraded spacecraft imagery with a residual-encoder UNet.

pub mod archive;
pub mod config;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{load_image, save_image, ImageTensor};
pub use tensor::Tensor;
