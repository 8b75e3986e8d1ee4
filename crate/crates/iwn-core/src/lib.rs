//! Robust DCT-domain image watermarking with an idempotency-trained
//! restoration network.
//!
//! The pipeline: embed a same-size watermark into a host image in the DCT
//! domain, damage the watermarked image with one of five attacks, and train a
//! per-pair encoder-decoder so that repeated application projects damaged
//! instances back onto their clean watermarked state. Extraction then
//! recovers the watermark from the restored image.

pub mod attacks;
pub mod backbone;
pub mod data_io;
pub mod dct_codec;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
