//! Learning, synthesizing and evaluating camera noise in the sRGB domain.
//!
//! A pixel-wise conditional flow models the per-pixel noise distribution
//! given the clean image and camera settings, and a residual U-Net trained
//! adversarially adds the spatial correlation the flow cannot express.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gan;
pub mod image;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
