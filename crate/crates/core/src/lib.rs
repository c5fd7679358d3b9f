//! One-shot voice conversion by disentangling speech into rhythm, pitch,
//! content and timbre codes.
//!
//! The pipeline runs from audio to log-mel and normalized pitch
//! ([`features`]), through four encoders and two decoders ([`model`])
//! trained with reconstruction, speaker classification (with gradient
//! reversal on the speaker-irrelevant codes) and a variational CLUB
//! mutual-information penalty ([`mi`], [`train`]), to aspect-selective
//! conversion ([`convert`]) and objective metrics ([`eval`]).

pub mod convert;
pub mod error;
pub mod eval;
pub mod features;
pub mod mi;
pub mod model;
pub mod nn;
pub mod resample;
pub(crate) mod seed;
pub mod train;

pub use error::{Error, Result};
