//! Full-reference image quality assessment with a transformer
//! encoder-decoder over backbone difference features.
//!
//! A frozen multi-stage backbone produces features for the reference and
//! distorted images. Their difference is embedded as a token sequence for
//! the encoder, the reference features feed the decoder, and an MLP head
//! reads the decoder's quality token to predict a scalar score.

pub mod attention;
pub mod backbone;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod transformer;

pub use error::{IqtError, Result};
