//! Deterministic signal primitives: STFT, mel filterbank, ZCR, smoothing,
//! max-pool envelopes, Kaiser resampling, peak/gain arithmetic.
//!
//! Everything here is a pure function of its inputs; all types are immutable
//! value types and safe to share between threads.

mod frame;
mod mel;
mod resample;
mod stft;
mod waveform;

pub use frame::{discrete_derivative, envelope, gaussian_smooth, zero_crossing_rate, FrameCurve};

pub(crate) mod stft_support {
    pub(crate) use super::stft::{hann_window, reflect_index, reflect_pad};
}
pub use mel::{mel_filterbank, mel_spectrogram, hz_to_mel, mel_to_hz, MelParamSet, MelSpectrogram};
pub use resample::kaiser_resample;
pub use stft::{stft_magnitude, Spectrogram};
pub use waveform::Waveform;

/// Log floor applied inside mel log compression.
pub const MEL_LOG_FLOOR: f64 = 1e-5;
