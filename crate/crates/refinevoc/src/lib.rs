//! Full-band pitch-guided GAN vocoder toolkit.
//!
//! The pipeline: estimate a fused pitch curve from audio, build a
//! pulse/noise speech template from it, and refine that template into a
//! waveform with an encoder-decoder generator trained against
//! multi-resolution spectral, envelope, and adversarial losses. Training
//! data is generated on the fly by pitch- and loudness-based augmentation.

pub mod augment;
pub mod config;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pitch;
pub mod signal;
pub mod template;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
