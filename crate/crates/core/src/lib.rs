//! Monocular depth prediction as per-pixel classification over log-spaced
//! depth bins, with attention-gated multi-scale feature fusion.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantizer`] maps metric depth to bin labels and decodes bin
//!   distributions back to depth (soft-weighted sum or hard max).
//! * [`metrics`] implements the six benchmark error measures and the
//!   label confusion matrix.
//! * [`nn`] is a small f64 tensor library with explicit backward passes.
//! * [`model`] builds the encoder, global-context branch, FTB/AFA fusion
//!   decoder and the classification/regression heads.
//! * [`data`] holds synthetic scene generators, folder adapters,
//!   densification and augmentation.
//! * [`train`] contains the losses, SGD schedule, training loop and evaluation.
//! * [`pipeline`] does tiled inference, experiment drivers and rendering.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod quantizer;
pub mod train;

pub use error::{Error, Result};
pub use quantizer::QuantizationSpec;
