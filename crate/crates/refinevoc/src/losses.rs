//! Training objectives: multi-parameter mel loss, envelope loss, and the
//! adversarial generator/discriminator losses, all as pure differentiable
//! functions. The scalar API wraps tape-level builders that the training
//! loop composes into larger graphs.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::signal::{mel_filterbank, MelParamSet, Waveform, MEL_LOG_FLOOR};

/// Default envelope pooling: window 512, hop 256 at 44.1 kHz.
pub const DEFAULT_ENVELOPE_WIN: usize = 512;
pub const DEFAULT_ENVELOPE_HOP: usize = 256;

/// Ordered mel parameter sets averaged by the multi-parameter mel loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelLossConfig {
    pub param_sets: Vec<MelParamSet>,
    pub log_floor: f64,
}

impl Default for MelLossConfig {
    fn default() -> Self {
        // six-level time/frequency ladder; the last three fft/hop/win
        // triples match the multi-resolution discriminator defaults
        let sets = [
            (512, 128, 512, 32),
            (1024, 256, 1024, 64),
            (2048, 512, 2048, 128),
            (4096, 1024, 4096, 128),
            (1024, 120, 600, 64),
            (512, 50, 240, 32),
        ];
        MelLossConfig {
            param_sets: sets
                .iter()
                .map(|&(fft, hop, win, n_mels)| MelParamSet {
                    fft_size: fft,
                    win_size: win,
                    hop_size: hop,
                    n_mels,
                    f_min: 20.0,
                    f_max: 22050.0,
                })
                .collect(),
            log_floor: MEL_LOG_FLOOR,
        }
    }
}

impl MelLossConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.param_sets.is_empty() {
            return Err(Error::InvalidParam("mel loss needs at least one parameter set".into()));
        }
        for set in &self.param_sets {
            set.validate(sample_rate)?;
        }
        Ok(())
    }
}

/// Weights of the generator objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_mel: 45.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mel > 0.0) {
            return Err(Error::InvalidParam("lambda_mel must be > 0".into()));
        }
        Ok(())
    }
}

/// One score tensor per sub-discriminator.
pub type ScoreSet = Vec<Tensor>;

fn check_pair(y: &Waveform, y_hat: &Waveform) -> Result<()> {
    if y.len() != y_hat.len() || y.sample_rate != y_hat.sample_rate {
        return Err(Error::ShapeMismatch(format!(
            "waveforms differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            y.len(),
            y.sample_rate,
            y_hat.len(),
            y_hat.sample_rate
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    Ok(())
}

// ---- tape-level builders ----

/// Mean over parameter sets of the MSE between log-mel spectrograms.
pub fn multi_mel_loss_t(
    tape: &mut Tape,
    y: Var,
    y_hat: Var,
    cfg: &MelLossConfig,
    sample_rate: u32,
) -> Result<Var> {
    cfg.validate(sample_rate)?;
    let mut per_set = Vec::with_capacity(cfg.param_sets.len());
    for set in &cfg.param_sets {
        let fb = Rc::new(mel_filterbank(set, sample_rate)?);
        let log_mel = |tape: &mut Tape, v: Var| {
            let spec = tape.stft_mag(v, set.fft_size, set.win_size, set.hop_size);
            let mel = tape.matmul_const(fb.clone(), set.n_mels, spec);
            tape.log_floor(mel, cfg.log_floor)
        };
        let my = log_mel(tape, y);
        let mh = log_mel(tape, y_hat);
        per_set.push(tape.mse(my, mh));
    }
    Ok(tape.mean_of(&per_set))
}

/// Mean absolute difference of positive envelopes plus mean absolute
/// difference of polarity-reversed envelopes.
pub fn envelope_loss_t(tape: &mut Tape, y: Var, y_hat: Var, win: usize, hop: usize) -> Var {
    let py = tape.max_pool1d(y, win, hop);
    let ph = tape.max_pool1d(y_hat, win, hop);
    let pos = tape.mean_abs_diff(py, ph);
    let ny = tape.neg(y);
    let nh = tape.neg(y_hat);
    let pny = tape.max_pool1d(ny, win, hop);
    let pnh = tape.max_pool1d(nh, win, hop);
    let neg = tape.mean_abs_diff(pny, pnh);
    tape.add(pos, neg)
}

/// mean(softplus(-s)) averaged over a list of score vars.
pub fn mean_softplus_neg(tape: &mut Tape, scores: &[Var]) -> Var {
    let terms: Vec<Var> = scores
        .iter()
        .map(|&s| {
            let n = tape.neg(s);
            let sp = tape.softplus(n);
            tape.mean(sp)
        })
        .collect();
    tape.mean_of(&terms)
}

/// mean(softplus(s)) averaged over a list of score vars.
pub fn mean_softplus_pos(tape: &mut Tape, scores: &[Var]) -> Var {
    let terms: Vec<Var> = scores
        .iter()
        .map(|&s| {
            let sp = tape.softplus(s);
            tape.mean(sp)
        })
        .collect();
    tape.mean_of(&terms)
}

/// Generator adversarial term over both discriminator families.
pub fn adversarial_g_loss_t(tape: &mut Tape, fake_mpd: &[Var], fake_mrd: &[Var]) -> Var {
    assert!(!fake_mpd.is_empty() && !fake_mrd.is_empty());
    let a = mean_softplus_neg(tape, fake_mpd);
    let b = mean_softplus_neg(tape, fake_mrd);
    tape.add(a, b)
}

/// Discriminator loss for one family: mean over sub-discriminators of
/// softplus(-real) + softplus(fake).
pub fn family_d_loss_t(tape: &mut Tape, real: &[Var], fake: &[Var]) -> Var {
    assert_eq!(real.len(), fake.len());
    let r = mean_softplus_neg(tape, real);
    let f = mean_softplus_pos(tape, fake);
    tape.add(r, f)
}

// ---- scalar API ----

fn wave_leaf(tape: &mut Tape, w: &Waveform) -> Var {
    tape.leaf(Tensor::from_vec(&[w.len()], w.samples.clone()))
}

pub fn multi_mel_loss(y: &Waveform, y_hat: &Waveform, cfg: &MelLossConfig) -> Result<f64> {
    check_pair(y, y_hat)?;
    let mut tape = Tape::new();
    let vy = wave_leaf(&mut tape, y);
    let vh = wave_leaf(&mut tape, y_hat);
    let loss = multi_mel_loss_t(&mut tape, vy, vh, cfg, y.sample_rate)?;
    Ok(tape.value(loss).item())
}

/// Loss value plus its gradient with respect to `y_hat`.
pub fn multi_mel_loss_grad(
    y: &Waveform,
    y_hat: &Waveform,
    cfg: &MelLossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_pair(y, y_hat)?;
    let mut tape = Tape::new();
    let vy = wave_leaf(&mut tape, y);
    let vh = wave_leaf(&mut tape, y_hat);
    let loss = multi_mel_loss_t(&mut tape, vy, vh, cfg, y.sample_rate)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    Ok((value, grads[vh.0].data.clone()))
}

pub fn envelope_loss(y: &Waveform, y_hat: &Waveform, win: usize, hop: usize) -> Result<f64> {
    check_pair(y, y_hat)?;
    if win == 0 || hop == 0 {
        return Err(Error::InvalidParam("win and hop must be > 0".into()));
    }
    let mut tape = Tape::new();
    let vy = wave_leaf(&mut tape, y);
    let vh = wave_leaf(&mut tape, y_hat);
    let loss = envelope_loss_t(&mut tape, vy, vh, win, hop);
    Ok(tape.value(loss).item())
}

pub fn envelope_loss_grad(
    y: &Waveform,
    y_hat: &Waveform,
    win: usize,
    hop: usize,
) -> Result<(f64, Vec<f64>)> {
    check_pair(y, y_hat)?;
    let mut tape = Tape::new();
    let vy = wave_leaf(&mut tape, y);
    let vh = wave_leaf(&mut tape, y_hat);
    let loss = envelope_loss_t(&mut tape, vy, vh, win, hop);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    Ok((value, grads[vh.0].data.clone()))
}

pub fn adversarial_g_loss(fake_mpd: &ScoreSet, fake_mrd: &ScoreSet) -> Result<f64> {
    if fake_mpd.is_empty() || fake_mrd.is_empty() {
        return Err(Error::InvalidParam("score sets must be non-empty".into()));
    }
    let mut tape = Tape::new();
    let mpd: Vec<Var> = fake_mpd.iter().map(|t| tape.leaf(t.clone())).collect();
    let mrd: Vec<Var> = fake_mrd.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = adversarial_g_loss_t(&mut tape, &mpd, &mrd);
    Ok(tape.value(loss).item())
}

/// Per-term breakdown of the generator objective.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorLossTerms {
    pub total: f64,
    pub mel: f64,
    pub weighted_mel: f64,
    pub envelope: f64,
    pub adversarial: f64,
}

pub fn generator_total_loss(
    y: &Waveform,
    y_hat: &Waveform,
    fake_mpd: &ScoreSet,
    fake_mrd: &ScoreSet,
    weights: &LossWeights,
    mel_cfg: &MelLossConfig,
    env_win: usize,
    env_hop: usize,
) -> Result<(f64, GeneratorLossTerms)> {
    weights.validate()?;
    let mel = multi_mel_loss(y, y_hat, mel_cfg)?;
    let env = envelope_loss(y, y_hat, env_win, env_hop)?;
    let adv = adversarial_g_loss(fake_mpd, fake_mrd)?;
    let total = weights.lambda_mel * mel + env + adv;
    Ok((
        total,
        GeneratorLossTerms {
            total,
            mel,
            weighted_mel: weights.lambda_mel * mel,
            envelope: env,
            adversarial: adv,
        },
    ))
}

/// Per-family breakdown of the discriminator objective.
#[derive(Debug, Clone, Serialize)]
pub struct DiscriminatorLossTerms {
    pub total: f64,
    pub mpd: f64,
    pub mrd: f64,
}

pub fn discriminator_loss(
    real_mpd: &ScoreSet,
    fake_mpd: &ScoreSet,
    real_mrd: &ScoreSet,
    fake_mrd: &ScoreSet,
) -> Result<(f64, DiscriminatorLossTerms)> {
    if real_mpd.len() != fake_mpd.len() || real_mrd.len() != fake_mrd.len() {
        return Err(Error::ShapeMismatch(format!(
            "sub-discriminator counts differ: mpd {} vs {}, mrd {} vs {}",
            real_mpd.len(),
            fake_mpd.len(),
            real_mrd.len(),
            fake_mrd.len()
        )));
    }
    if real_mpd.is_empty() || real_mrd.is_empty() {
        return Err(Error::InvalidParam("score sets must be non-empty".into()));
    }
    let mut tape = Tape::new();
    let as_vars = |tape: &mut Tape, set: &ScoreSet| -> Vec<Var> {
        set.iter().map(|t| tape.leaf(t.clone())).collect()
    };
    let rm = as_vars(&mut tape, real_mpd);
    let fm = as_vars(&mut tape, fake_mpd);
    let rr = as_vars(&mut tape, real_mrd);
    let fr = as_vars(&mut tape, fake_mrd);
    let mpd = family_d_loss_t(&mut tape, &rm, &fm);
    let mrd = family_d_loss_t(&mut tape, &rr, &fr);
    let total = tape.add(mpd, mrd);
    Ok((
        tape.value(total).item(),
        DiscriminatorLossTerms {
            total: tape.value(total).item(),
            mpd: tape.value(mpd).item(),
            mrd: tape.value(mrd).item(),
        },
    ))
}
