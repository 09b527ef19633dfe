//! Frame-rate F0 estimation with voiced/unvoiced decision.
//!
//! Two normalized-autocorrelation base estimators (a conservative
//! "coarse" one and a permissive, sub-sample "fine" one) are combined by
//! a fusion rule driven by the smoothed derivative of the zero-crossing
//! rate: where the ZCR is rising faster than a threshold, the frame is
//! kept only if the coarse estimator also voices it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{discrete_derivative, gaussian_smooth, zero_crossing_rate, Waveform};

pub const DEFAULT_F_FLOOR: f64 = 40.0;
pub const DEFAULT_F_CEIL: f64 = 1600.0;

const COARSE_VOICING_THRESHOLD: f64 = 0.5;
const FINE_VOICING_THRESHOLD: f64 = 0.3;
const RMS_GATE: f64 = 1e-3;
/// A candidate peak this close to the global max may be preferred at a
/// smaller lag, guarding against octave-down errors.
const PEAK_TOLERANCE: f64 = 0.9;

/// Frame-rate F0 in Hz, one value per frame; 0 encodes unvoiced.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchCurve {
    pub f0: Vec<f64>,
    pub hop_size: usize,
    pub sample_rate: u32,
}

impl PitchCurve {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

/// Parameters of the ZCR-derivative fusion rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchFusionConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub zcr_win: usize,
    pub zcr_hop: usize,
}

impl Default for PitchFusionConfig {
    fn default() -> Self {
        PitchFusionConfig {
            sigma: 4.0,
            gamma: 0.002,
            zcr_win: 512,
            zcr_hop: 256,
        }
    }
}

impl PitchFusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidParam("sigma and gamma must be > 0".into()));
        }
        if self.zcr_win == 0 || self.zcr_hop == 0 {
            return Err(Error::InvalidParam("zcr_win and zcr_hop must be > 0".into()));
        }
        Ok(())
    }
}

struct AutocorrOptions {
    voicing_threshold: f64,
    parabolic: bool,
}

fn estimate_autocorr(
    wave: &Waveform,
    hop_size: usize,
    f_floor: f64,
    f_ceil: f64,
    opt: &AutocorrOptions,
) -> Result<PitchCurve> {
    let sr = wave.sample_rate as f64;
    if !(f_floor > 0.0 && f_floor < f_ceil && f_ceil < sr / 2.0) {
        return Err(Error::InvalidParam(format!(
            "need 0 < f_floor ({f_floor}) < f_ceil ({f_ceil}) < sample_rate/2"
        )));
    }
    if hop_size == 0 {
        return Err(Error::InvalidParam("hop_size must be > 0".into()));
    }
    let win = (2.0 * sr / f_floor).ceil() as usize;
    if wave.len() < win {
        return Err(Error::TooShort {
            got: wave.len(),
            need: win,
        });
    }
    let tau_min = (sr / f_ceil).floor().max(2.0) as usize;
    let tau_max = (sr / f_floor).ceil() as usize;

    let n = wave.len();
    let n_frames = n / hop_size + 1;
    let x = &wave.samples;
    let mut f0 = Vec::with_capacity(n_frames);

    for t in 0..n_frames {
        let center = t * hop_size;
        let start = center.saturating_sub(win / 2).min(n - 1);
        let end = (start + win).min(n);
        let frame = &x[start..end];
        let w = frame.len();
        if w <= tau_max + 1 {
            f0.push(0.0);
            continue;
        }
        let rms = (frame.iter().map(|s| s * s).sum::<f64>() / w as f64).sqrt();
        if rms < RMS_GATE {
            f0.push(0.0);
            continue;
        }
        // voicing must be supported by energy near the frame center, not
        // just anywhere in the long window; otherwise a tone next to a
        // silent region bleeds pitch several frames into the silence
        let c_lo = center.saturating_sub(win / 8);
        let c_hi = (center + win / 8).min(n);
        let c_rms = (x[c_lo..c_hi].iter().map(|s| s * s).sum::<f64>()
            / (c_hi - c_lo) as f64)
            .sqrt();
        if c_rms < RMS_GATE {
            f0.push(0.0);
            continue;
        }

        // prefix sums of squares for the normalization terms
        let mut sq = vec![0.0; w + 1];
        for i in 0..w {
            sq[i + 1] = sq[i] + frame[i] * frame[i];
        }
        let corr: Vec<f64> = (tau_min..=tau_max)
            .map(|tau| {
                let m = w - tau;
                let mut dot = 0.0;
                for i in 0..m {
                    dot += frame[i] * frame[i + tau];
                }
                let e0 = sq[m];
                let e1 = sq[w] - sq[tau];
                if e0 <= 0.0 || e1 <= 0.0 {
                    0.0
                } else {
                    dot / (e0 * e1).sqrt()
                }
            })
            .collect();

        let (best_idx, best_r) = corr
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &r)| {
                if r > acc.1 {
                    (i, r)
                } else {
                    acc
                }
            });
        if best_r < opt.voicing_threshold {
            f0.push(0.0);
            continue;
        }
        // smallest interior local maximum close enough to the global peak
        let mut idx = best_idx;
        for i in 1..corr.len().saturating_sub(1) {
            if corr[i] >= corr[i - 1]
                && corr[i] >= corr[i + 1]
                && corr[i] >= PEAK_TOLERANCE * best_r
            {
                idx = i;
                break;
            }
        }
        let mut lag = (tau_min + idx) as f64;
        if opt.parabolic && idx > 0 && idx + 1 < corr.len() {
            let (rm, r0, rp) = (corr[idx - 1], corr[idx], corr[idx + 1]);
            let denom = rm - 2.0 * r0 + rp;
            if denom.abs() > 1e-12 {
                let delta = 0.5 * (rm - rp) / denom;
                if delta.abs() < 1.0 {
                    lag += delta;
                }
            }
        }
        let f = sr / lag;
        f0.push(if (f_floor..=f_ceil).contains(&f) { f } else { 0.0 });
    }

    Ok(PitchCurve {
        f0,
        hop_size,
        sample_rate: wave.sample_rate,
    })
}

/// Conservative base estimator: integer-lag autocorrelation with a hard
/// voicing gate (more zeros).
pub fn estimate_base_coarse(
    wave: &Waveform,
    hop_size: usize,
    f_floor: f64,
    f_ceil: f64,
) -> Result<PitchCurve> {
    estimate_autocorr(
        wave,
        hop_size,
        f_floor,
        f_ceil,
        &AutocorrOptions {
            voicing_threshold: COARSE_VOICING_THRESHOLD,
            parabolic: false,
        },
    )
}

/// Permissive base estimator: parabolic interpolation of the
/// autocorrelation peak for sub-sample lag resolution, lower voicing
/// threshold.
pub fn estimate_base_fine(
    wave: &Waveform,
    hop_size: usize,
    f_floor: f64,
    f_ceil: f64,
) -> Result<PitchCurve> {
    estimate_autocorr(
        wave,
        hop_size,
        f_floor,
        f_ceil,
        &AutocorrOptions {
            voicing_threshold: FINE_VOICING_THRESHOLD,
            parabolic: true,
        },
    )
}

/// Fuse the permissive and conservative estimates using the smoothed ZCR
/// derivative `d`: below the threshold the fine value passes through;
/// above it the frame survives only where the coarse estimator voices it.
pub fn fuse_pitch(
    fine: &PitchCurve,
    coarse: &PitchCurve,
    wave: &Waveform,
    cfg: &PitchFusionConfig,
) -> Result<PitchCurve> {
    cfg.validate()?;
    if fine.hop_size != coarse.hop_size || fine.len() != coarse.len() {
        return Err(Error::ShapeMismatch(format!(
            "fine ({} frames, hop {}) vs coarse ({} frames, hop {})",
            fine.len(),
            fine.hop_size,
            coarse.len(),
            coarse.hop_size
        )));
    }
    let zcr = zero_crossing_rate(wave, cfg.zcr_win, cfg.zcr_hop)?;
    let deriv = discrete_derivative(&zcr)?;
    let d = gaussian_smooth(&deriv, cfg.sigma)?;

    let mut f0 = Vec::with_capacity(fine.len());
    for t in 0..fine.len() {
        // nearest-frame lookup on the ZCR grid
        let pos = t * fine.hop_size;
        let zi = ((pos as f64 / cfg.zcr_hop as f64).round() as usize).min(d.len() - 1);
        let dv = d.values[zi];
        // ties (dv == gamma) take the pass-through case
        let v = if dv <= cfg.gamma {
            fine.f0[t]
        } else if coarse.f0[t] > 0.0 {
            fine.f0[t]
        } else {
            0.0
        };
        f0.push(v);
    }
    Ok(PitchCurve {
        f0,
        hop_size: fine.hop_size,
        sample_rate: fine.sample_rate,
    })
}

pub fn voiced_mask(curve: &PitchCurve) -> Vec<bool> {
    curve.f0.iter().map(|&f| f > 0.0).collect()
}

/// Two-column text format: `# hop=<n> sr=<n>` header, then
/// `frame_index f0_hz` rows.
pub fn pitch_to_text(curve: &PitchCurve) -> String {
    let mut out = format!("# hop={} sr={}\n", curve.hop_size, curve.sample_rate);
    for (i, f) in curve.f0.iter().enumerate() {
        out.push_str(&format!("{i} {f:.6}\n"));
    }
    out
}

pub fn pitch_from_text(text: &str) -> Result<PitchCurve> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParam("empty pitch file".into()))?;
    let parse_field = |name: &str| -> Result<u64> {
        header
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(&format!("{name}=")))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidParam(format!("pitch header missing {name}=")))
    };
    let hop = parse_field("hop")? as usize;
    let sr = parse_field("sr")? as u32;
    let mut f0 = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let _idx: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidParam(format!("bad pitch row: {line}")))?;
        let f: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidParam(format!("bad pitch row: {line}")))?;
        f0.push(f);
    }
    Ok(PitchCurve {
        f0,
        hop_size: hop,
        sample_rate: sr,
    })
}
