use crate::error::{Error, Result};

/// Mono sample sequence with its sample rate. Samples are dimensionless
/// amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParam("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// max |samples|. Errors on an empty waveform.
    pub fn peak(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        Ok(self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs())))
    }

    /// Scale every sample by `gain`.
    pub fn apply_gain(&self, gain: f64) -> Result<Waveform> {
        if !gain.is_finite() {
            return Err(Error::InvalidParam("gain must be finite".into()));
        }
        Ok(Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_of_mixed_signs() {
        let w = Waveform::new(vec![0.2, -0.5], 44100).unwrap();
        assert_eq!(w.peak().unwrap(), 0.5);
    }

    #[test]
    fn peak_of_empty_errors() {
        let w = Waveform::new(vec![], 44100).unwrap();
        assert!(w.peak().is_err());
    }

    #[test]
    fn gain_identity_and_doubling() {
        let w = Waveform::new(vec![0.1, -0.3, 0.25], 8000).unwrap();
        assert_eq!(w.apply_gain(1.0).unwrap(), w);
        let doubled = w.apply_gain(2.0).unwrap();
        assert!((doubled.peak().unwrap() - 2.0 * w.peak().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_rate_and_nan() {
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 44100).is_err());
    }
}
