use serde::{Deserialize, Serialize};

use super::stft::stft_magnitude;
use super::waveform::Waveform;
use super::MEL_LOG_FLOOR;
use crate::error::{Error, Result};

/// STFT + mel parameters for one analysis resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelParamSet {
    pub fft_size: usize,
    pub win_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelParamSet {
    /// Full-band defaults: 44.1 kHz, fft/win 2048, hop 256, 128 mel
    /// channels from 20 Hz.
    pub fn full_band() -> Self {
        MelParamSet {
            fft_size: 2048,
            win_size: 2048,
            hop_size: 256,
            n_mels: 128,
            f_min: 20.0,
            f_max: 22050.0,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.win_size == 0 || self.win_size > self.fft_size {
            return Err(Error::InvalidParam(format!(
                "win_size {} must be in (0, fft_size {}]",
                self.win_size, self.fft_size
            )));
        }
        if self.hop_size == 0 || self.hop_size > self.win_size {
            return Err(Error::InvalidParam(format!(
                "hop_size {} must be in (0, win_size {}]",
                self.hop_size, self.win_size
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::InvalidParam(format!(
                "need 0 < f_min ({}) < f_max ({}) <= nyquist ({})",
                self.f_min, self.f_max, nyquist
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidParam("n_mels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Log-mel matrix `[n_mels x n_frames]` (row-major) plus the parameters
/// that produced it.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub log_mels: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub params: MelParamSet,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.log_mels[mel * self.n_frames + frame]
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank `[n_mels x n_bins]` (row-major) on the HTK mel
/// scale. Errors if any filter row lands between FFT bins (all-zero row).
pub fn mel_filterbank(params: &MelParamSet, sample_rate: u32) -> Result<Vec<f64>> {
    params.validate(sample_rate)?;
    let n_bins = params.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(params.f_min);
    let mel_hi = hz_to_mel(params.f_max);
    // n_mels + 2 edge points
    let edges: Vec<f64> = (0..params.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (params.n_mels + 1) as f64))
        .collect();
    let bin_freq: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / params.fft_size as f64)
        .collect();

    let mut fb = vec![0.0; params.n_mels * n_bins];
    for m in 0..params.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = bin_freq[k];
            let up = (f - lo) / (center - lo);
            let down = (hi - f) / (hi - center);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                fb[m * n_bins + k] = w;
                any = true;
            }
        }
        if !any {
            return Err(Error::InvalidParam(format!(
                "mel filter row {m} is all-zero: n_mels {} too large for fft resolution {}",
                params.n_mels, params.fft_size
            )));
        }
    }
    Ok(fb)
}

/// `log(max(filterbank * |STFT|, eps))` with eps = 1e-5.
pub fn mel_spectrogram(wave: &Waveform, params: &MelParamSet) -> Result<MelSpectrogram> {
    let spec = stft_magnitude(wave, params)?;
    let fb = mel_filterbank(params, wave.sample_rate)?;
    let n_bins = spec.n_bins;
    let n_frames = spec.n_frames;
    let n_mels = params.n_mels;
    let mut log_mels = vec![0.0; n_mels * n_frames];
    for m in 0..n_mels {
        for t in 0..n_frames {
            let mut acc = 0.0;
            for k in 0..n_bins {
                let w = fb[m * n_bins + k];
                if w != 0.0 {
                    acc += w * spec.magnitudes[k * n_frames + t];
                }
            }
            log_mels[m * n_frames + t] = acc.max(MEL_LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        log_mels,
        n_mels,
        n_frames,
        params: params.clone(),
    })
}
