//! Multi-period and multi-resolution discriminators. Each sub-discriminator
//! emits a 2-D score map; the losses average over all map elements.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::WnConv2d;
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};

/// Linear-magnitude STFT resolution used by one MRD branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftResolution {
    pub fft_size: usize,
    pub hop_size: usize,
    pub win_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub mpd_periods: Vec<usize>,
    /// Channel plan for the five strided period-branch convs.
    pub mpd_channels: Vec<usize>,
    pub mrd_param_sets: Vec<StftResolution>,
    /// Channel plan for the four strided resolution-branch convs.
    pub mrd_channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            mpd_periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![4, 8, 16, 32, 64],
            mrd_param_sets: vec![
                StftResolution { fft_size: 1024, hop_size: 120, win_size: 600 },
                StftResolution { fft_size: 2048, hop_size: 240, win_size: 1200 },
                StftResolution { fft_size: 512, hop_size: 50, win_size: 240 },
            ],
            mrd_channels: vec![8, 16, 32, 64],
            leaky_slope: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    /// Small preset for desk-scale experiments (8 kHz fixtures).
    pub fn toy() -> Self {
        DiscriminatorConfig {
            mpd_periods: vec![2, 3, 5],
            mpd_channels: vec![2, 4, 4, 8, 8],
            mrd_param_sets: vec![
                StftResolution { fft_size: 256, hop_size: 64, win_size: 256 },
                StftResolution { fft_size: 128, hop_size: 32, win_size: 128 },
            ],
            mrd_channels: vec![2, 4, 4, 8],
            leaky_slope: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpd_periods.is_empty() {
            return Err(Error::InvalidParam("need at least one period".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &p in &self.mpd_periods {
            if p < 2 {
                return Err(Error::InvalidParam(format!("period {p} < 2")));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidParam(format!("duplicate period {p}")));
            }
        }
        if self.mrd_param_sets.is_empty() {
            return Err(Error::InvalidParam("need at least one STFT resolution".into()));
        }
        for r in &self.mrd_param_sets {
            if r.fft_size == 0 || r.hop_size == 0 || r.win_size == 0 || r.win_size > r.fft_size {
                return Err(Error::InvalidParam(format!(
                    "invalid STFT resolution {r:?}: need 0 < win <= fft and hop > 0"
                )));
            }
            if !r.fft_size.is_power_of_two() {
                return Err(Error::InvalidParam(format!("fft_size {} not a power of two", r.fft_size)));
            }
        }
        if self.mpd_channels.is_empty() || self.mrd_channels.is_empty() {
            return Err(Error::InvalidParam("channel plans must be non-empty".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParam("leaky_slope must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One period branch: reshape to a (rows, period) grid, then strided 2-D
/// convs with kernel (5,1) stride (3,1) and a final 1-channel (3,1) conv.
struct PeriodBranch {
    period: usize,
    convs: Vec<WnConv2d>,
    post: WnConv2d,
}

/// One resolution branch over linear STFT magnitudes: strided 2-D convs
/// with kernel (3,3) stride (1,2) and a final 1-channel conv.
struct ResolutionBranch {
    res: StftResolution,
    convs: Vec<WnConv2d>,
    post: WnConv2d,
}

pub struct MultiPeriodDiscriminator {
    slope: f64,
    branches: Vec<PeriodBranch>,
}

pub struct MultiResolutionDiscriminator {
    slope: f64,
    branches: Vec<ResolutionBranch>,
}

pub fn build_mpd(cfg: &DiscriminatorConfig, seed: u64) -> Result<MultiPeriodDiscriminator> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branches = cfg
        .mpd_periods
        .iter()
        .map(|&period| {
            let mut convs = Vec::new();
            let mut c_in = 1;
            for &c_out in &cfg.mpd_channels {
                convs.push(WnConv2d::new(c_in, c_out, (5, 1), (3, 1), (2, 0), &mut rng));
                c_in = c_out;
            }
            let post = WnConv2d::new(c_in, 1, (3, 1), (1, 1), (1, 0), &mut rng);
            PeriodBranch { period, convs, post }
        })
        .collect();
    Ok(MultiPeriodDiscriminator { slope: cfg.leaky_slope, branches })
}

pub fn build_mrd(cfg: &DiscriminatorConfig, seed: u64) -> Result<MultiResolutionDiscriminator> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branches = cfg
        .mrd_param_sets
        .iter()
        .map(|&res| {
            let mut convs = Vec::new();
            let mut c_in = 1;
            for &c_out in &cfg.mrd_channels {
                convs.push(WnConv2d::new(c_in, c_out, (3, 3), (1, 2), (1, 1), &mut rng));
                c_in = c_out;
            }
            let post = WnConv2d::new(c_in, 1, (3, 3), (1, 1), (1, 1), &mut rng);
            ResolutionBranch { res, convs, post }
        })
        .collect();
    Ok(MultiResolutionDiscriminator { slope: cfg.leaky_slope, branches })
}

impl MultiPeriodDiscriminator {
    /// Score maps for a [L] waveform Var, one per period.
    pub fn forward_t(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Result<Vec<Var>> {
        let n = tape.value(x).numel();
        let max_p = self.branches.iter().map(|b| b.period).max().unwrap();
        if n < max_p {
            return Err(Error::TooShort { got: n, need: max_p });
        }
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut h = tape.period_reshape(x, b.period);
            for conv in &b.convs {
                h = conv.forward(tape, h, reg);
                h = tape.leaky_relu(h, self.slope);
            }
            out.push(b.post.forward(tape, h, reg));
        }
        Ok(out)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for b in &self.branches {
            for c in &b.convs {
                c.visit(f);
            }
            b.post.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for b in &mut self.branches {
            for c in &mut b.convs {
                c.visit_mut(f);
            }
            b.post.visit_mut(f);
        }
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }
}

impl MultiResolutionDiscriminator {
    pub fn forward_t(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Result<Vec<Var>> {
        let n = tape.value(x).numel();
        let max_fft = self.branches.iter().map(|b| b.res.fft_size).max().unwrap();
        if n < max_fft {
            return Err(Error::TooShort { got: n, need: max_fft });
        }
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let spec = tape.stft_mag(x, b.res.fft_size, b.res.win_size, b.res.hop_size);
            let bins = b.res.fft_size / 2 + 1;
            let frames = tape.value(spec).shape[1];
            let mut h = tape.reshape(spec, &[1, bins, frames]);
            for conv in &b.convs {
                h = conv.forward(tape, h, reg);
                h = tape.leaky_relu(h, self.slope);
            }
            out.push(b.post.forward(tape, h, reg));
        }
        Ok(out)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for b in &self.branches {
            for c in &b.convs {
                c.visit(f);
            }
            b.post.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for b in &mut self.branches {
            for c in &mut b.convs {
                c.visit_mut(f);
            }
            b.post.visit_mut(f);
        }
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[n], (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
    }

    #[test]
    fn default_branch_counts() {
        let cfg = DiscriminatorConfig::default();
        let mpd = build_mpd(&cfg, 1).unwrap();
        let mrd = build_mrd(&cfg, 2).unwrap();
        assert_eq!(mpd.n_branches(), 5);
        assert_eq!(mrd.n_branches(), 3);
    }

    #[test]
    fn scores_finite_and_shape_deterministic() {
        let cfg = DiscriminatorConfig::toy();
        let mpd = build_mpd(&cfg, 3).unwrap();
        let mrd = build_mrd(&cfg, 4).unwrap();
        let x = noise(2048, 9);
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let mut reg = Vec::new();
        let sp = mpd.forward_t(&mut tape, v, &mut reg).unwrap();
        let sr = mrd.forward_t(&mut tape, v, &mut reg).unwrap();
        assert_eq!(sp.len(), 3);
        assert_eq!(sr.len(), 2);
        let shapes: Vec<Vec<usize>> = sp
            .iter()
            .chain(&sr)
            .map(|&s| {
                let t = tape.value(s);
                assert!(t.data.iter().all(|v| v.is_finite()));
                t.shape.clone()
            })
            .collect();
        // rebuild with the same seeds: identical shapes (and values)
        let mpd2 = build_mpd(&cfg, 3).unwrap();
        let mut tape2 = Tape::new();
        let v2 = tape2.leaf(x);
        let sp2 = mpd2.forward_t(&mut tape2, v2, &mut Vec::new()).unwrap();
        for (i, &s) in sp2.iter().enumerate() {
            assert_eq!(tape2.value(s).shape, shapes[i]);
            assert_eq!(tape2.value(s).data, tape.value(sp[i]).data);
        }
    }

    #[test]
    fn too_short_input_rejected() {
        let cfg = DiscriminatorConfig::toy();
        let mpd = build_mpd(&cfg, 5).unwrap();
        let mrd = build_mrd(&cfg, 6).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(noise(4, 1));
        assert!(matches!(
            mpd.forward_t(&mut tape, v, &mut Vec::new()),
            Err(Error::TooShort { .. })
        ));
        let mut tape = Tape::new();
        let v = tape.leaf(noise(64, 1));
        assert!(matches!(
            mrd.forward_t(&mut tape, v, &mut Vec::new()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn registry_matches_visit_order() {
        let cfg = DiscriminatorConfig::toy();
        let mpd = build_mpd(&cfg, 7).unwrap();
        let mrd = build_mrd(&cfg, 8).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(noise(1024, 2));
        let mut reg = Vec::new();
        mpd.forward_t(&mut tape, v, &mut reg).unwrap();
        mrd.forward_t(&mut tape, v, &mut reg).unwrap();
        let mut shapes = Vec::new();
        mpd.visit(&mut |t| shapes.push(t.shape.clone()));
        mrd.visit(&mut |t| shapes.push(t.shape.clone()));
        assert_eq!(reg.len(), shapes.len());
        for (v, s) in reg.iter().zip(&shapes) {
            assert_eq!(&tape.value(*v).shape, s);
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = DiscriminatorConfig::default();
        cfg.mpd_periods = vec![2, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = DiscriminatorConfig::default();
        cfg.mpd_periods = vec![1];
        assert!(cfg.validate().is_err());
        let mut cfg = DiscriminatorConfig::default();
        cfg.mrd_param_sets[0].win_size = 4096;
        assert!(cfg.validate().is_err());
    }
}
