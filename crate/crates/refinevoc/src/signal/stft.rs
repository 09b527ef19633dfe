use rustfft::{num_complex::Complex, FftPlanner};

use super::mel::MelParamSet;
use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Linear magnitude spectrogram, `n_bins = fft_size/2 + 1` rows by
/// `n_frames` columns, stored row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub params: MelParamSet,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.n_frames + frame]
    }
}

/// Periodic Hann window.
pub(crate) fn hann_window(win_size: usize) -> Vec<f64> {
    (0..win_size)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win_size as f64).cos())
        .collect()
}

/// Mirror an out-of-range index back into [0, n), reflecting about the
/// endpoints without repeating them.
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as i64 {
        j = period - j;
    }
    j as usize
}

/// Center-pad by `pad` samples on each side with reflection.
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in -(pad as i64)..(n + pad) as i64 {
        out.push(x[reflect_index(i, n)]);
    }
    out
}

/// Number of STFT frames for an `n`-sample signal under center padding.
pub fn n_stft_frames(n_samples: usize, hop_size: usize) -> usize {
    n_samples / hop_size + 1
}

/// Hann-windowed, center-padded (reflect) magnitude STFT. Frame `t` covers
/// samples centered at `t * hop_size`.
pub fn stft_magnitude(wave: &Waveform, params: &MelParamSet) -> Result<Spectrogram> {
    params.validate(wave.sample_rate)?;
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let fft_size = params.fft_size;
    let win_size = params.win_size;
    let hop = params.hop_size;
    let n_bins = fft_size / 2 + 1;
    let n_frames = n_stft_frames(wave.len(), hop);

    let padded = reflect_pad(&wave.samples, fft_size / 2);
    let window = hann_window(win_size);
    // win_size <= fft_size; the window sits centered inside the frame
    let win_off = (fft_size - win_size) / 2;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut magnitudes = vec![0.0; n_bins * n_frames];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];

    for t in 0..n_frames {
        let start = t * hop;
        for v in buf.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for (i, w) in window.iter().enumerate() {
            buf[win_off + i] = Complex::new(padded[start + win_off + i] * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            magnitudes[k * n_frames + t] = buf[k].norm();
        }
    }

    Ok(Spectrogram {
        magnitudes,
        n_bins,
        n_frames,
        params: params.clone(),
    })
}
