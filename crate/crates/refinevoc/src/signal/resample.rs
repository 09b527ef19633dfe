use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Kaiser window shape. High-quality setting; together with
/// [`ZERO_CROSSINGS`] only the band-limiting property is contract-bearing.
const KAISER_BETA: f64 = 14.77;
/// Sinc zero crossings per side at unit cutoff.
const ZERO_CROSSINGS: usize = 64;
/// Cutoff roll-off so the transition band sits below the new Nyquist.
const ROLL_OFF: f64 = 0.9475;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = (x / 2.0) * (x / 2.0);
    for k in 1..200 {
        term *= half_sq / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited polyphase-style resampling with a Kaiser-windowed sinc,
/// evaluated directly per output sample. Output length is
/// `round(n * target / source)`.
pub fn kaiser_resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidParam("target_rate must be positive".into()));
    }
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    if wave.is_empty() {
        return Ok(Waveform {
            samples: vec![],
            sample_rate: target_rate,
        });
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let n_out = (wave.len() as f64 * ratio).round() as usize;
    // when downsampling, stretch the filter and scale its gain by the cutoff
    let cutoff = ROLL_OFF * ratio.min(1.0);
    let half_width = ZERO_CROSSINGS as f64 / cutoff;
    let x = &wave.samples;
    let n = x.len() as i64;

    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let center = i as f64 / ratio;
        let k_lo = (center - half_width).ceil() as i64;
        let k_hi = (center + half_width).floor() as i64;
        let mut acc = 0.0;
        for k in k_lo.max(0)..=k_hi.min(n - 1) {
            let t = center - k as f64;
            acc += x[k as usize] * cutoff * sinc(cutoff * t) * kaiser(t / half_width);
        }
        out.push(acc);
    }
    Ok(Waveform {
        samples: out,
        sample_rate: target_rate,
    })
}
