use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Frame-rate curve (ZCR, smoothed derivatives, envelopes) with the
/// window/hop that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCurve {
    pub values: Vec<f64>,
    pub hop_size: usize,
    pub win_size: usize,
}

impl FrameCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-frame fraction of adjacent-sample sign changes within the window.
/// Zero samples inherit the previous sign; a leading zero counts positive.
pub fn zero_crossing_rate(wave: &Waveform, win_size: usize, hop_size: usize) -> Result<FrameCurve> {
    if win_size == 0 || hop_size == 0 {
        return Err(Error::InvalidParam("win_size and hop_size must be > 0".into()));
    }
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let n = wave.len();
    // resolved signs for the whole signal; zeros carry the previous sign
    let mut signs = Vec::with_capacity(n);
    let mut prev = 1i8;
    for &s in &wave.samples {
        let sg = if s > 0.0 {
            1
        } else if s < 0.0 {
            -1
        } else {
            prev
        };
        signs.push(sg);
        prev = sg;
    }
    let n_frames = n.div_ceil(hop_size);
    let mut values = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop_size;
        let end = (start + win_size).min(n);
        let window = end - start;
        let mut crossings = 0usize;
        for i in start + 1..end {
            if signs[i] != signs[i - 1] {
                crossings += 1;
            }
        }
        values.push(crossings as f64 / window as f64);
    }
    Ok(FrameCurve {
        values,
        hop_size,
        win_size,
    })
}

/// Gaussian kernel g(x) = sqrt(sigma/pi) * exp(-sigma x^2) sampled at
/// integer offsets, truncated below 1e-6 of peak.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let scale = (sigma / std::f64::consts::PI).sqrt();
    // exp(-sigma x^2) < 1e-6  <=>  x > sqrt(ln(1e6)/sigma)
    let half = ((1e6f64.ln() / sigma).sqrt()).floor() as usize;
    (-(half as i64)..=half as i64)
        .map(|x| scale * (-sigma * (x * x) as f64).exp())
        .collect()
}

/// Convolve with the (unnormalized) Gaussian kernel above; edges replicate.
pub fn gaussian_smooth(curve: &FrameCurve, sigma: f64) -> Result<FrameCurve> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParam("sigma must be > 0".into()));
    }
    let kernel = gaussian_kernel(sigma);
    let half = kernel.len() as i64 / 2;
    let n = curve.values.len() as i64;
    let mut values = Vec::with_capacity(curve.values.len());
    for t in 0..n {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            let idx = (t + j as i64 - half).clamp(0, n - 1);
            acc += k * curve.values[idx as usize];
        }
        values.push(acc);
    }
    Ok(FrameCurve {
        values,
        hop_size: curve.hop_size,
        win_size: curve.win_size,
    })
}

/// Forward difference; the last frame repeats the previous value.
pub fn discrete_derivative(curve: &FrameCurve) -> Result<FrameCurve> {
    let n = curve.values.len();
    if n < 2 {
        return Err(Error::InvalidParam("need at least 2 frames for a derivative".into()));
    }
    let mut values: Vec<f64> = curve
        .values
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    values.push(values[n - 2]);
    Ok(FrameCurve {
        values,
        hop_size: curve.hop_size,
        win_size: curve.win_size,
    })
}

/// Max-pool envelope: frame t = max over samples [t*hop, t*hop + win);
/// tail frames pool the remaining shorter window.
pub fn envelope(wave: &Waveform, win_size: usize, hop_size: usize) -> Result<FrameCurve> {
    if win_size == 0 || hop_size == 0 {
        return Err(Error::InvalidParam("win_size and hop_size must be > 0".into()));
    }
    if wave.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let n = wave.len();
    let n_frames = n.div_ceil(hop_size);
    let mut values = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop_size;
        let end = (start + win_size).min(n);
        let m = wave.samples[start..end]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        values.push(m);
    }
    Ok(FrameCurve {
        values,
        hop_size,
        win_size,
    })
}
