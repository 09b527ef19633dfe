//! On-the-fly training-data generation: random slicing, semitone pitch
//! shifting by resampling, and peak-targeted loudness augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{kaiser_resample, Waveform};

/// Extra samples extracted beyond the exact ratio so the resampled span
/// never comes up short after rounding.
pub const RESAMPLER_MARGIN: usize = 64;

/// Semitone shift range; integers from `zeta_min` to `zeta_max` inclusive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftRange {
    pub zeta_min: i32,
    pub zeta_max: i32,
}

impl Default for ShiftRange {
    fn default() -> Self {
        ShiftRange {
            zeta_min: -12,
            zeta_max: 12,
        }
    }
}

impl ShiftRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta_min <= 0 && 0 <= self.zeta_max) {
            return Err(Error::InvalidParam(format!(
                "shift range must satisfy zeta_min <= 0 <= zeta_max, got [{}, {}]",
                self.zeta_min, self.zeta_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, zeta: i32) -> bool {
        (self.zeta_min..=self.zeta_max).contains(&zeta)
    }
}

/// Peak-amplitude bounds and adjustment-rate bounds for loudness
/// augmentation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoudnessRange {
    pub p_min: f64,
    pub p_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for LoudnessRange {
    fn default() -> Self {
        LoudnessRange {
            p_min: 0.1,
            p_max: 1.0,
            r_min: 0.5,
            r_max: 2.0,
        }
    }
}

impl LoudnessRange {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.p_min && self.p_min <= self.p_max && self.p_max <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "need 0 < p_min <= p_max <= 1, got [{}, {}]",
                self.p_min, self.p_max
            )));
        }
        if !(0.0 < self.r_min && self.r_min <= self.r_max) {
            return Err(Error::InvalidParam(format!(
                "need 0 < r_min <= r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }
}

/// Fixed-length training slice with the augmentation parameters that
/// produced it.
#[derive(Debug, Clone)]
pub struct AugmentedSlice {
    pub wave: Waveform,
    pub zeta: i32,
    pub gain: f64,
    pub source_id: usize,
    pub source_offset: usize,
}

/// Uniform draw over the integer semitone set.
pub fn sample_shift<R: Rng>(rng: &mut R, range: &ShiftRange) -> i32 {
    rng.gen_range(range.zeta_min..=range.zeta_max)
}

/// Shift pitch by `zeta` semitones: resample to `r * 2^(-zeta/12)` and
/// relabel the result at the original rate, so frequencies scale by
/// `2^(zeta/12)` and length by `2^(-zeta/12)`.
pub fn pitch_shift(wave: &Waveform, zeta: i32) -> Result<Waveform> {
    if zeta == 0 {
        return Ok(wave.clone());
    }
    let target = (wave.sample_rate as f64 * 2f64.powf(-(zeta as f64) / 12.0)).round() as u32;
    let resampled = kaiser_resample(wave, target)?;
    Waveform::new(resampled.samples, wave.sample_rate)
}

/// Source samples to extract so that `pitch_shift` of the span still
/// yields at least `n_slice` samples.
pub fn required_source_length(n_slice: usize, zeta: i32) -> usize {
    (n_slice as f64 * 2f64.powf(zeta as f64 / 12.0)).ceil() as usize + RESAMPLER_MARGIN
}

/// Draw a target peak uniformly on
/// `[max(p_min, r_min*p), min(p_max, r_max*p)]` and rescale the signal to
/// it. An empty interval clamps deterministically to the nearer bound.
pub fn loudness_augment<R: Rng>(
    wave: &Waveform,
    range: &LoudnessRange,
    rng: &mut R,
) -> Result<(Waveform, f64)> {
    range.validate()?;
    let p = wave.peak()?;
    if p == 0.0 {
        return Err(Error::SilentInput);
    }
    let lo = range.p_min.max(range.r_min * p);
    let hi = range.p_max.min(range.r_max * p);
    let p_new = if lo > hi {
        // empty interval: clamp to whichever bound is nearer to p
        if (p - lo).abs() <= (p - hi).abs() {
            lo
        } else {
            hi
        }
    } else if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    };
    let gain = p_new / p;
    Ok((wave.apply_gain(gain)?, gain))
}

/// One augmented training item: draw a shift, extract a span sized for it,
/// pitch-shift, truncate to `n_slice`, and loudness-augment.
pub fn make_training_item<R: Rng>(
    source: &Waveform,
    source_id: usize,
    n_slice: usize,
    shift_range: &ShiftRange,
    loud_range: &LoudnessRange,
    rng: &mut R,
) -> Result<AugmentedSlice> {
    shift_range.validate()?;
    loud_range.validate()?;
    let zeta = sample_shift(rng, shift_range);
    let need = required_source_length(n_slice, zeta);
    // worst case over the range, so item length never depends on the draw
    let worst = required_source_length(n_slice, shift_range.zeta_max);
    if source.len() < worst {
        return Err(Error::TooShort {
            got: source.len(),
            need: worst,
        });
    }
    let offset = rng.gen_range(0..=source.len() - need);
    let span = Waveform::new(
        source.samples[offset..offset + need].to_vec(),
        source.sample_rate,
    )?;
    let shifted = pitch_shift(&span, zeta)?;
    if shifted.len() < n_slice {
        return Err(Error::TooShort {
            got: shifted.len(),
            need: n_slice,
        });
    }
    let sliced = Waveform::new(shifted.samples[..n_slice].to_vec(), source.sample_rate)?;
    let (wave, gain) = loudness_augment(&sliced, loud_range, rng)?;
    Ok(AugmentedSlice {
        wave,
        zeta,
        gain,
        source_id,
        source_offset: offset,
    })
}

/// Dataset manifest entry for one scanned WAV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sample_rate: u32,
    pub n_samples: usize,
}
