//! Adversarial training loop: discriminator step on a detached generator
//! output, then a generator step with the full spectral + envelope +
//! adversarial objective. Also the checkpoint format and the feature
//! pipeline that turns a waveform into a training item.

use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::make_training_item;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_g_loss_t, envelope_loss_t, family_d_loss_t, multi_mel_loss_t,
};
use crate::model::{
    build_generator, build_mpd, build_mrd, DiscriminatorConfig, Generator, GeneratorConfig,
    MultiPeriodDiscriminator, MultiResolutionDiscriminator,
};
use crate::nn::{Adam, Tape, Tensor, Var};
use crate::pitch::{estimate_base_coarse, estimate_base_fine, fuse_pitch};
use crate::signal::{mel_spectrogram, Waveform};
use crate::template::{build_template, frame_intensity};

const CHECKPOINT_MAGIC: &[u8; 4] = b"RVCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub slice_len: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            steps: 500,
            seed: 0,
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            slice_len: 131072,
            checkpoint_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn toy() -> Self {
        TrainingConfig {
            batch_size: 1,
            slice_len: 4000,
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.slice_len == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidParam(
                "batch_size, slice_len, checkpoint_every must be > 0".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam("lr must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::InvalidParam(format!("{name} must be in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One conditioned example: the excitation template, its mel condition,
/// and the target waveform.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub template: Tensor,
    pub mel: Tensor,
    pub target: Waveform,
}

/// Feature pipeline: mel analysis, fused pitch, intensity, template.
pub fn prepare_item(wave: &Waveform, cfg: &RunConfig) -> Result<TrainItem> {
    let mel = mel_spectrogram(wave, &cfg.mel)?;
    let hop = cfg.mel.hop_size;
    let fine = estimate_base_fine(wave, hop, cfg.pitch.f_floor, cfg.pitch.f_ceil)?;
    let coarse = estimate_base_coarse(wave, hop, cfg.pitch.f_floor, cfg.pitch.f_ceil)?;
    let fused = fuse_pitch(&fine, &coarse, wave, &cfg.pitch.fusion)?;
    let intensity = frame_intensity(&mel);
    let template = build_template(&fused, &intensity, wave.len(), wave.sample_rate, &cfg.template)?;
    Ok(TrainItem {
        template: Tensor::from_vec(&[wave.len()], template.samples),
        mel: Tensor::from_vec(&[mel.n_mels, mel.n_frames], mel.log_mels),
        target: wave.clone(),
    })
}

pub struct ModelState {
    pub gen: Generator,
    pub mpd: MultiPeriodDiscriminator,
    pub mrd: MultiResolutionDiscriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub disc_cfg: DiscriminatorConfig,
    pub train_cfg: TrainingConfig,
    pub step: u64,
}

pub fn init_model(
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
    train_cfg: &TrainingConfig,
) -> Result<ModelState> {
    train_cfg.validate()?;
    let seed = train_cfg.seed;
    let gen = build_generator(gen_cfg, seed)?;
    let mpd = build_mpd(disc_cfg, seed.wrapping_add(1))?;
    let mrd = build_mrd(disc_cfg, seed.wrapping_add(2))?;
    let mut g_sizes = Vec::new();
    gen.visit(&mut |t| g_sizes.push(t.numel()));
    let mut d_sizes = Vec::new();
    mpd.visit(&mut |t| d_sizes.push(t.numel()));
    mrd.visit(&mut |t| d_sizes.push(t.numel()));
    Ok(ModelState {
        gen,
        mpd,
        mrd,
        opt_g: Adam::new(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, &g_sizes),
        opt_d: Adam::new(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, &d_sizes),
        disc_cfg: disc_cfg.clone(),
        train_cfg: train_cfg.clone(),
        step: 0,
    })
}

/// One JSONL metrics row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_total: f64,
    pub loss_mel: f64,
    pub loss_env: f64,
    pub loss_adv_g: f64,
    pub loss_mpd: f64,
    pub loss_mrd: f64,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Sum gradients over repeated forward passes: each registry holds the
/// parameter Vars of one pass, in visit order.
fn accumulate(grads: &[Tensor], regs: &[Vec<Var>]) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = regs[0].iter().map(|v| grads[v.0].clone()).collect();
    for reg in &regs[1..] {
        assert_eq!(reg.len(), out.len());
        for (i, v) in reg.iter().enumerate() {
            for (o, g) in out[i].data.iter_mut().zip(&grads[v.0].data) {
                *o += g;
            }
        }
    }
    out
}

fn require_finite(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{name} is {value}")))
    }
}

/// Discriminator loss on a batch, without touching parameters. Returns
/// (total, mpd, mrd) batch means.
pub fn eval_d_loss(state: &ModelState, fakes: &[Tensor], batch: &[TrainItem]) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let mut mpd_terms = Vec::new();
    let mut mrd_terms = Vec::new();
    for (item, fake) in batch.iter().zip(fakes) {
        let real = tape.leaf(Tensor::from_vec(&[item.target.len()], item.target.samples.clone()));
        let fake = tape.leaf(fake.clone());
        let mut sink = Vec::new();
        let rm = state.mpd.forward_t(&mut tape, real, &mut sink)?;
        let fm = state.mpd.forward_t(&mut tape, fake, &mut sink)?;
        let rr = state.mrd.forward_t(&mut tape, real, &mut sink)?;
        let fr = state.mrd.forward_t(&mut tape, fake, &mut sink)?;
        mpd_terms.push(family_d_loss_t(&mut tape, &rm, &fm));
        mrd_terms.push(family_d_loss_t(&mut tape, &rr, &fr));
    }
    let mpd = tape.mean_of(&mpd_terms);
    let mrd = tape.mean_of(&mrd_terms);
    let total = tape.add(mpd, mrd);
    Ok((
        tape.value(total).item(),
        tape.value(mpd).item(),
        tape.value(mrd).item(),
    ))
}

/// Detached generator outputs for a batch.
pub fn generate_detached(state: &ModelState, batch: &[TrainItem]) -> Result<Vec<Tensor>> {
    batch
        .iter()
        .map(|item| {
            let mut tape = Tape::new();
            let y = state
                .gen
                .forward_t(&mut tape, &item.template, &item.mel, &mut Vec::new())?;
            Ok(tape.value(y).clone())
        })
        .collect()
}

/// One adversarial training step: discriminator update on detached fakes,
/// then generator update with freshly recomputed scores.
pub fn train_step(state: &mut ModelState, batch: &[TrainItem], cfg: &RunConfig) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let sr = cfg.sample_rate;
    let fakes = generate_detached(state, batch)?;

    // --- discriminator phase ---
    let (loss_mpd, loss_mrd);
    {
        let mut tape = Tape::new();
        let mut mpd_regs: Vec<Vec<Var>> = Vec::new();
        let mut mrd_regs: Vec<Vec<Var>> = Vec::new();
        let mut mpd_terms = Vec::new();
        let mut mrd_terms = Vec::new();
        for (item, fake) in batch.iter().zip(&fakes) {
            let real =
                tape.leaf(Tensor::from_vec(&[item.target.len()], item.target.samples.clone()));
            let fake = tape.leaf(fake.clone());
            let mut reg = Vec::new();
            let rm = state.mpd.forward_t(&mut tape, real, &mut reg)?;
            mpd_regs.push(std::mem::take(&mut reg));
            let fm = state.mpd.forward_t(&mut tape, fake, &mut reg)?;
            mpd_regs.push(std::mem::take(&mut reg));
            let rr = state.mrd.forward_t(&mut tape, real, &mut reg)?;
            mrd_regs.push(std::mem::take(&mut reg));
            let fr = state.mrd.forward_t(&mut tape, fake, &mut reg)?;
            mrd_regs.push(std::mem::take(&mut reg));
            mpd_terms.push(family_d_loss_t(&mut tape, &rm, &fm));
            mrd_terms.push(family_d_loss_t(&mut tape, &rr, &fr));
        }
        let mpd_loss = tape.mean_of(&mpd_terms);
        let mrd_loss = tape.mean_of(&mrd_terms);
        let total = tape.add(mpd_loss, mrd_loss);
        loss_mpd = require_finite("discriminator period loss", tape.value(mpd_loss).item())?;
        loss_mrd = require_finite("discriminator resolution loss", tape.value(mrd_loss).item())?;
        let grads = tape.backward(total);
        let g_mpd = accumulate(&grads, &mpd_regs);
        let g_mrd = accumulate(&grads, &mrd_regs);

        let ModelState { mpd, mrd, opt_d, .. } = state;
        opt_d.begin_step();
        let mut idx = 0;
        mpd.visit_mut(&mut |t| {
            opt_d.update(idx, t, &g_mpd[idx]);
            idx += 1;
        });
        let offset = idx;
        mrd.visit_mut(&mut |t| {
            opt_d.update(idx, t, &g_mrd[idx - offset]);
            idx += 1;
        });
    }

    // --- generator phase (scores recomputed against the updated critics) ---
    let mut tape = Tape::new();
    let mut g_regs: Vec<Vec<Var>> = Vec::new();
    let mut mel_terms = Vec::new();
    let mut env_terms = Vec::new();
    let mut adv_terms = Vec::new();
    for item in batch {
        let mut reg = Vec::new();
        let y_hat = state
            .gen
            .forward_t(&mut tape, &item.template, &item.mel, &mut reg)?;
        g_regs.push(reg);
        let y = tape.leaf(Tensor::from_vec(&[item.target.len()], item.target.samples.clone()));
        mel_terms.push(multi_mel_loss_t(&mut tape, y, y_hat, &cfg.mel_loss, sr)?);
        env_terms.push(envelope_loss_t(
            &mut tape,
            y,
            y_hat,
            cfg.envelope.win_size,
            cfg.envelope.hop_size,
        ));
        let mut sink = Vec::new();
        let fm = state.mpd.forward_t(&mut tape, y_hat, &mut sink)?;
        let fr = state.mrd.forward_t(&mut tape, y_hat, &mut sink)?;
        adv_terms.push(adversarial_g_loss_t(&mut tape, &fm, &fr));
    }
    let mel_mean = tape.mean_of(&mel_terms);
    let env_mean = tape.mean_of(&env_terms);
    let adv_mean = tape.mean_of(&adv_terms);
    let mel_scaled = tape.scale(mel_mean, cfg.weights.lambda_mel);
    let partial = tape.add(mel_scaled, env_mean);
    let total = tape.add(partial, adv_mean);

    let loss_mel = require_finite("mel loss", tape.value(mel_mean).item())?;
    let loss_env = require_finite("envelope loss", tape.value(env_mean).item())?;
    let loss_adv_g = require_finite("adversarial loss", tape.value(adv_mean).item())?;
    let loss_total = require_finite("generator loss", tape.value(total).item())?;

    let grads = tape.backward(total);
    let g_gen = accumulate(&grads, &g_regs);
    let ModelState { gen, opt_g, .. } = state;
    opt_g.begin_step();
    let mut idx = 0;
    gen.visit_mut(&mut |t| {
        opt_g.update(idx, t, &g_gen[idx]);
        idx += 1;
    });

    state.step += 1;
    Ok(StepMetrics {
        step: state.step,
        loss_total,
        loss_mel,
        loss_env,
        loss_adv_g,
        loss_mpd,
        loss_mrd,
    })
}

// --- checkpointing ---

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    step: u64,
    gen_cfg: GeneratorConfig,
    disc_cfg: DiscriminatorConfig,
    train_cfg: TrainingConfig,
    opt_g: Adam,
    opt_d: Adam,
    tensor_shapes: Vec<Vec<usize>>,
}

fn collect_tensors(state: &ModelState) -> Vec<Tensor> {
    let mut out = Vec::new();
    state.gen.visit(&mut |t| out.push(t.clone()));
    state.mpd.visit(&mut |t| out.push(t.clone()));
    state.mrd.visit(&mut |t| out.push(t.clone()));
    out
}

pub fn save_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    let tensors = collect_tensors(state);
    let header = CheckpointHeader {
        step: state.step,
        gen_cfg: state.gen.cfg.clone(),
        disc_cfg: state.disc_cfg.clone(),
        train_cfg: state.train_cfg.clone(),
        opt_g: state.opt_g.clone(),
        opt_d: state.opt_d.clone(),
        tensor_shapes: tensors.iter().map(|t| t.shape.clone()).collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialize: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for t in &tensors {
        for &x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(fail("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| fail(&format!("header parse: {e}")))?;

    let gen = build_generator(&header.gen_cfg, 0)?;
    let mpd = build_mpd(&header.disc_cfg, 0)?;
    let mrd = build_mrd(&header.disc_cfg, 0)?;
    let mut state = ModelState {
        gen,
        mpd,
        mrd,
        opt_g: header.opt_g,
        opt_d: header.opt_d,
        disc_cfg: header.disc_cfg,
        train_cfg: header.train_cfg,
        step: header.step,
    };

    let mut shapes = Vec::new();
    state.gen.visit(&mut |t| shapes.push(t.shape.clone()));
    state.mpd.visit(&mut |t| shapes.push(t.shape.clone()));
    state.mrd.visit(&mut |t| shapes.push(t.shape.clone()));
    if shapes != header.tensor_shapes {
        return Err(fail("tensor shapes do not match the stored config"));
    }
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let blob = &bytes[16 + hlen..];
    if blob.len() != total * 8 {
        return Err(fail(&format!(
            "tensor payload is {} bytes, expected {}",
            blob.len(),
            total * 8
        )));
    }
    let mut off = 0usize;
    let mut restore = |t: &mut Tensor| {
        for x in t.data.iter_mut() {
            *x = f64::from_le_bytes(blob[off..off + 8].try_into().unwrap());
            off += 8;
        }
    };
    state.gen.visit_mut(&mut restore);
    state.mpd.visit_mut(&mut restore);
    state.mrd.visit_mut(&mut restore);
    drop(restore);
    let mut finite = true;
    state.gen.visit(&mut |t| finite &= t.is_finite());
    if !finite {
        return Err(fail("non-finite generator parameters"));
    }
    Ok(state)
}

// --- run loop ---

/// Per-step data RNG derived from (seed, step) so resumed runs draw the
/// same augmentations as uninterrupted ones.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Draw a batch from the sources with on-the-fly augmentation, reusing
/// prepared features when the augmented slice is identical (the common
/// case in degenerate-augmentation overfit runs).
pub fn draw_batch(
    sources: &[Waveform],
    cfg: &RunConfig,
    step: u64,
    cache: &mut HashMap<(usize, i32, usize, u64), TrainItem>,
) -> Result<Vec<TrainItem>> {
    if sources.is_empty() {
        return Err(Error::InvalidParam("no training sources".into()));
    }
    use rand::Rng;
    let mut rng = step_rng(cfg.training.seed, step);
    let mut batch = Vec::with_capacity(cfg.training.batch_size);
    for _ in 0..cfg.training.batch_size {
        let id = rng.gen_range(0..sources.len());
        let slice = make_training_item(
            &sources[id],
            id,
            cfg.training.slice_len,
            &cfg.shift,
            &cfg.loudness,
            &mut rng,
        )?;
        let key = (id, slice.zeta, slice.source_offset, slice.gain.to_bits());
        let item = match cache.get(&key) {
            Some(item) => item.clone(),
            None => {
                let item = prepare_item(&slice.wave, cfg)?;
                cache.insert(key, item.clone());
                item
            }
        };
        batch.push(item);
    }
    Ok(batch)
}

/// Callback-driven training loop used by the CLI; returns all metrics.
pub fn run_training(
    sources: &[Waveform],
    cfg: &RunConfig,
    state: &mut ModelState,
    mut on_step: impl FnMut(&StepMetrics, &ModelState) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let mut cache = HashMap::new();
    let mut all = Vec::new();
    while state.step < cfg.training.steps {
        let batch = draw_batch(sources, cfg, state.step, &mut cache)?;
        let metrics = train_step(state, &batch, cfg)?;
        on_step(&metrics, state)?;
        all.push(metrics);
    }
    Ok(all)
}
