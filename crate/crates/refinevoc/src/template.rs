//! Pitch-guided speech template: intensity-scaled single-sample pulses at
//! period 1/f0 in voiced regions, uniform noise in unvoiced regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pitch::PitchCurve;
use crate::signal::{FrameCurve, MelSpectrogram, MEL_LOG_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    pub noise_amp: f64,
    pub rng_seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            noise_amp: 0.1,
            rng_seed: 0,
        }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_amp > 0.0) {
            return Err(Error::InvalidParam("noise_amp must be > 0".into()));
        }
        Ok(())
    }
}

/// Sample-rate excitation signal conditioning the generator.
#[derive(Debug, Clone)]
pub struct SpeechTemplate {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub pulse_positions: Vec<usize>,
}

/// Per-frame intensity from the Frobenius norm of the linear-magnitude mel
/// column, normalized to the utterance maximum. Values at the log floor
/// count as zero, so silence maps to intensity 0.
pub fn frame_intensity(mel: &MelSpectrogram) -> FrameCurve {
    let mut values = Vec::with_capacity(mel.n_frames);
    for t in 0..mel.n_frames {
        let mut acc = 0.0;
        for m in 0..mel.n_mels {
            let lin = (mel.at(m, t).exp() - MEL_LOG_FLOOR).max(0.0);
            acc += lin * lin;
        }
        values.push(acc.sqrt());
    }
    let max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
    FrameCurve {
        values,
        hop_size: mel.params.hop_size,
        win_size: mel.params.win_size,
    }
}

/// Build the template by scanning samples with a phase accumulator: each
/// time the accumulated phase passes 1 a single-sample pulse of the
/// frame's intensity is emitted. Unvoiced samples are uniform noise scaled
/// by `noise_amp` and the frame intensity. The phase resets at each
/// unvoiced-to-voiced transition so the first voiced sample pulses.
pub fn build_template(
    pitch: &PitchCurve,
    intensity: &FrameCurve,
    n_samples: usize,
    sample_rate: u32,
    cfg: &TemplateConfig,
) -> Result<SpeechTemplate> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidParam("n_samples must be > 0".into()));
    }
    if pitch.len() != intensity.len() {
        return Err(Error::ShapeMismatch(format!(
            "pitch has {} frames, intensity has {}",
            pitch.len(),
            intensity.len()
        )));
    }
    if pitch.f0.iter().any(|&f| f < 0.0) {
        return Err(Error::InvalidParam("negative f0".into()));
    }
    let hop = pitch.hop_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut samples = vec![0.0; n_samples];
    let mut pulse_positions = Vec::new();

    let mut phase = 1.0f64; // so the very first voiced sample pulses
    let mut prev_voiced = false;
    for s in 0..n_samples {
        let frame = (s / hop).min(pitch.len() - 1);
        let f0 = pitch.f0[frame];
        let inten = intensity.values[frame];
        if f0 > 0.0 {
            if !prev_voiced {
                phase = 1.0;
            }
            if phase >= 1.0 {
                phase -= 1.0;
                samples[s] = inten;
                pulse_positions.push(s);
            }
            phase += f0 / sample_rate as f64;
            prev_voiced = true;
        } else {
            let amp = cfg.noise_amp * inten;
            samples[s] = if amp > 0.0 {
                rng.gen_range(-amp..=amp)
            } else {
                0.0
            };
            prev_voiced = false;
        }
    }
    Ok(SpeechTemplate {
        samples,
        sample_rate,
        pulse_positions,
    })
}
