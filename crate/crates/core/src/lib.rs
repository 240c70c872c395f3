//! Two-step domain-adaptive monocular depth estimation.
//!
//! An encoder-decoder is first trained with supervision on synthetic
//! colour/depth pairs; a clone of its encoder is then aligned to a second,
//! unlabeled image domain by feature-level adversarial training, and plugged
//! back into the frozen decoder for inference.

pub mod cli;
pub mod config;
pub mod error;
pub mod evalmetrics;
pub mod losses;
pub mod networks;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, ErrorCategory, Result};
