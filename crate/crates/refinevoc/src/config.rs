//! Run configuration: one TOML file with a section per pipeline stage.
//! Unknown keys are rejected so typos fail loudly before any audio is read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{LoudnessRange, ShiftRange};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, MelLossConfig, DEFAULT_ENVELOPE_HOP, DEFAULT_ENVELOPE_WIN};
use crate::model::{DiscriminatorConfig, GeneratorConfig, StftResolution};
use crate::pitch::{PitchFusionConfig, DEFAULT_F_CEIL, DEFAULT_F_FLOOR};
use crate::signal::MelParamSet;
use crate::template::TemplateConfig;
use crate::train::TrainingConfig;

/// Pitch-tracking section: estimator range plus the fusion parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub f_floor: f64,
    pub f_ceil: f64,
    pub fusion: PitchFusionConfig,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            f_floor: DEFAULT_F_FLOOR,
            f_ceil: DEFAULT_F_CEIL,
            fusion: PitchFusionConfig::default(),
        }
    }
}

impl PitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_floor > 0.0 && self.f_floor < self.f_ceil) {
            return Err(Error::InvalidParam(format!(
                "pitch range needs 0 < f_floor < f_ceil, got [{}, {}]",
                self.f_floor, self.f_ceil
            )));
        }
        self.fusion.validate()
    }
}

/// Envelope-loss pooling geometry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    pub win_size: usize,
    pub hop_size: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            win_size: DEFAULT_ENVELOPE_WIN,
            hop_size: DEFAULT_ENVELOPE_HOP,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_size == 0 || self.hop_size == 0 {
            return Err(Error::InvalidParam("envelope win/hop must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub mel: MelParamSet,
    pub pitch: PitchConfig,
    pub template: TemplateConfig,
    pub shift: ShiftRange,
    pub loudness: LoudnessRange,
    pub mel_loss: MelLossConfig,
    pub weights: LossWeights,
    pub envelope: EnvelopeConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sample_rate: 44100,
            mel: MelParamSet::full_band(),
            pitch: PitchConfig::default(),
            template: TemplateConfig::default(),
            shift: ShiftRange::default(),
            loudness: LoudnessRange::default(),
            mel_loss: MelLossConfig::default(),
            weights: LossWeights::default(),
            envelope: EnvelopeConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 8 kHz audio, hop 4, tiny channel counts. Small
    /// enough that a full training loop runs in minutes on one core.
    pub fn toy() -> Self {
        let mel = MelParamSet {
            fft_size: 64,
            win_size: 16,
            hop_size: 4,
            n_mels: 8,
            f_min: 40.0,
            f_max: 4000.0,
        };
        let mel_loss = MelLossConfig {
            param_sets: vec![
                MelParamSet {
                    fft_size: 256,
                    win_size: 256,
                    hop_size: 64,
                    n_mels: 16,
                    f_min: 40.0,
                    f_max: 4000.0,
                },
                MelParamSet {
                    fft_size: 512,
                    win_size: 512,
                    hop_size: 128,
                    n_mels: 24,
                    f_min: 40.0,
                    f_max: 4000.0,
                },
            ],
            ..MelLossConfig::default()
        };
        RunConfig {
            sample_rate: 8000,
            mel,
            mel_loss,
            // hold the clip fixed: no pitch shift, unit gain
            shift: ShiftRange {
                zeta_min: 0,
                zeta_max: 0,
            },
            loudness: LoudnessRange {
                p_min: 0.01,
                p_max: 1.0,
                r_min: 1.0,
                r_max: 1.0,
            },
            generator: GeneratorConfig::toy(8),
            discriminator: DiscriminatorConfig::toy(),
            training: TrainingConfig::toy(),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let field = |name: &str, r: Result<()>| {
            r.map_err(|e| Error::Config(format!("{name}: {e}")))
        };
        field("mel", self.mel.validate(self.sample_rate))?;
        field("pitch", self.pitch.validate())?;
        field("template", self.template.validate())?;
        field("shift", self.shift.validate())?;
        field("loudness", self.loudness.validate())?;
        field("mel_loss", self.mel_loss.validate(self.sample_rate))?;
        field("weights", self.weights.validate())?;
        field("envelope", self.envelope.validate())?;
        field("generator", self.generator.validate(self.mel.hop_size))?;
        field("discriminator", self.discriminator.validate())?;
        field("training", self.training.validate())?;
        if self.generator.n_mels != self.mel.n_mels {
            return Err(Error::Config(format!(
                "generator.n_mels ({}) must equal mel.n_mels ({})",
                self.generator.n_mels, self.mel.n_mels
            )));
        }
        for r in &self.discriminator.mrd_param_sets {
            if r.fft_size > self.training.slice_len {
                return Err(Error::Config(format!(
                    "discriminator fft_size {} exceeds training.slice_len {}",
                    r.fft_size, self.training.slice_len
                )));
            }
        }
        if self.training.slice_len % self.mel.hop_size != 0 {
            return Err(Error::Config(format!(
                "training.slice_len ({}) must be a multiple of mel.hop_size ({})",
                self.training.slice_len, self.mel.hop_size
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

// keep the import used when rustc trims the prelude
#[allow(unused)]
fn _resolution_type_is_exported(_: StftResolution) {}
