//! Encoder–decoder refiner: downsamples the excitation template, fuses in
//! the mel condition at the bottleneck, and upsamples back to sample rate
//! with U-Net cross-connections and parallel dilated residual blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ResBlock, WnConv1d, WnConvT1d};
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::signal::{MelSpectrogram, Waveform};
use crate::template::SpeechTemplate;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub down_rates: Vec<usize>,
    pub up_rates: Vec<usize>,
    pub base_channels: usize,
    pub decoder_kernels: Vec<usize>,
    pub encoder_kernel: usize,
    pub dilations: Vec<usize>,
    pub n_mels: usize,
    pub leaky_slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            down_rates: vec![2, 2, 8, 8],
            up_rates: vec![8, 8, 2, 2],
            base_channels: 16,
            decoder_kernels: vec![3, 7, 11],
            encoder_kernel: 7,
            dilations: vec![1, 3, 5],
            n_mels: 128,
            leaky_slope: 0.1,
        }
    }
}

impl GeneratorConfig {
    /// Small preset for desk-scale experiments (hop 4).
    pub fn toy(n_mels: usize) -> Self {
        GeneratorConfig {
            down_rates: vec![2, 2],
            up_rates: vec![2, 2],
            base_channels: 4,
            n_mels,
            ..GeneratorConfig::default()
        }
    }

    pub fn hop_size(&self) -> usize {
        self.down_rates.iter().product()
    }

    pub fn validate(&self, hop_size: usize) -> Result<()> {
        if self.down_rates.is_empty() || self.up_rates.len() != self.down_rates.len() {
            return Err(Error::InvalidParam(
                "down_rates and up_rates must be non-empty and the same length".into(),
            ));
        }
        let dp: usize = self.down_rates.iter().product();
        let up: usize = self.up_rates.iter().product();
        if dp != hop_size || up != hop_size {
            return Err(Error::InvalidParam(format!(
                "rate products must equal the conditioning hop: down {dp}, up {up}, hop {hop_size}"
            )));
        }
        if self.down_rates.iter().chain(&self.up_rates).any(|&r| r < 2 || r % 2 != 0) {
            return Err(Error::InvalidParam(
                "resampling rates must be even and >= 2 (kernel 2*rate, centered crop)".into(),
            ));
        }
        if self.base_channels == 0 || self.n_mels == 0 {
            return Err(Error::InvalidParam("base_channels and n_mels must be > 0".into()));
        }
        if self.decoder_kernels.is_empty() || self.dilations.is_empty() {
            return Err(Error::InvalidParam(
                "decoder_kernels and dilations must be non-empty".into(),
            ));
        }
        if self
            .decoder_kernels
            .iter()
            .chain(std::iter::once(&self.encoder_kernel))
            .any(|&k| k % 2 == 0)
        {
            return Err(Error::InvalidParam("conv kernels must be odd for 'same' padding".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParam("leaky_slope must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Receptive field (in output samples) of the decoder's conv stack, a
    /// structural audit of the dilation ladder.
    pub fn decoder_receptive_field(&self) -> usize {
        let per_resolution: usize = self
            .decoder_kernels
            .iter()
            .map(|&k| self.dilations.iter().map(|&d| (k - 1) * d + (k - 1)).sum::<usize>())
            .max()
            .unwrap_or(0);
        // each decoder stage runs at a coarser grid; converting its field to
        // output samples multiplies by the remaining upsampling factor
        let mut field = 0usize;
        let mut scale = 1usize;
        for &r in self.up_rates.iter().rev() {
            field += per_resolution * scale;
            scale *= r;
        }
        field.max(per_resolution)
    }
}

pub struct Generator {
    pub cfg: GeneratorConfig,
    input_conv: WnConv1d,
    enc_down: Vec<WnConv1d>,
    enc_res: Vec<ResBlock>,
    mel_conv: WnConv1d,
    fuse_conv: WnConv1d,
    dec_up: Vec<WnConvT1d>,
    dec_merge: Vec<WnConv1d>,
    dec_res: Vec<Vec<ResBlock>>,
    out_conv: WnConv1d,
}

pub fn build_generator(cfg: &GeneratorConfig, seed: u64) -> Result<Generator> {
    cfg.validate(cfg.hop_size())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.down_rates.len();
    let c = cfg.base_channels;
    let k = cfg.encoder_kernel;
    let slope = cfg.leaky_slope;

    let input_conv = WnConv1d::new(1, c, k, 1, 1, &mut rng);
    let mut enc_down = Vec::with_capacity(n);
    let mut enc_res = Vec::with_capacity(n);
    for (i, &rate) in cfg.down_rates.iter().enumerate() {
        let (ci, co) = (c << i, c << (i + 1));
        enc_down.push(WnConv1d::new(ci, co, 2 * rate, rate, 1, &mut rng));
        enc_res.push(ResBlock::new(co, k, &cfg.dilations, slope, &mut rng));
    }
    let top = c << n;
    let mel_conv = WnConv1d::new(cfg.n_mels, top, 1, 1, 1, &mut rng);
    let fuse_conv = WnConv1d::new(2 * top, top, k, 1, 1, &mut rng);

    let mut dec_up = Vec::with_capacity(n);
    let mut dec_merge = Vec::with_capacity(n);
    let mut dec_res = Vec::with_capacity(n);
    for (j, &rate) in cfg.up_rates.iter().enumerate() {
        let (ci, co) = (c << (n - j), c << (n - j - 1));
        dec_up.push(WnConvT1d::new(ci, co, 2 * rate, rate, &mut rng));
        dec_merge.push(WnConv1d::new(2 * co, co, 1, 1, 1, &mut rng));
        dec_res.push(
            cfg.decoder_kernels
                .iter()
                .map(|&dk| ResBlock::new(co, dk, &cfg.dilations, slope, &mut rng))
                .collect(),
        );
    }
    let out_conv = WnConv1d::new(c, 1, k, 1, 1, &mut rng);

    Ok(Generator {
        cfg: cfg.clone(),
        input_conv,
        enc_down,
        enc_res,
        mel_conv,
        fuse_conv,
        dec_up,
        dec_merge,
        dec_res,
        out_conv,
    })
}

impl Generator {
    /// Differentiable forward pass. `template` is a [L] tensor, `mel` a
    /// [n_mels, frames] tensor with frames >= L/hop (extra center-padding
    /// frames are trimmed). Parameters are registered on `reg` in visit
    /// order; the output Var has shape [L].
    pub fn forward_t(
        &self,
        tape: &mut Tape,
        template: &Tensor,
        mel: &Tensor,
        reg: &mut Vec<Var>,
    ) -> Result<Var> {
        let hop = self.cfg.hop_size();
        let l = template.numel();
        if l == 0 || l % hop != 0 {
            return Err(Error::ShapeMismatch(format!(
                "template length {l} must be a positive multiple of the hop {hop}"
            )));
        }
        let frames = l / hop;
        if mel.shape.len() != 2 || mel.shape[0] != self.cfg.n_mels || mel.shape[1] < frames {
            return Err(Error::ShapeMismatch(format!(
                "mel condition must be [{}, >= {frames}], got {:?}",
                self.cfg.n_mels, mel.shape
            )));
        }
        // trim the condition to exactly L/hop frames
        let mut cond = vec![0.0; self.cfg.n_mels * frames];
        for m in 0..self.cfg.n_mels {
            cond[m * frames..(m + 1) * frames]
                .copy_from_slice(&mel.data[m * mel.shape[1]..m * mel.shape[1] + frames]);
        }
        let mel_in = tape.leaf(Tensor::from_vec(&[self.cfg.n_mels, frames], cond));
        let x0 = tape.leaf(template.clone());
        let mut x = tape.reshape(x0, &[1, l]);

        x = self.input_conv.forward(tape, x, reg);
        let mut skips = vec![x];
        let n = self.enc_down.len();
        for i in 0..n {
            x = self.enc_down[i].forward(tape, x, reg);
            x = self.enc_res[i].forward(tape, x, reg);
            if i < n - 1 {
                skips.push(x);
            }
        }

        let m = self.mel_conv.forward(tape, mel_in, reg);
        x = tape.concat0(x, m);
        x = self.fuse_conv.forward(tape, x, reg);

        for j in 0..n {
            x = self.dec_up[j].forward(tape, x, reg);
            let skip = skips[n - 1 - j];
            x = tape.concat0(x, skip);
            x = self.dec_merge[j].forward(tape, x, reg);
            let branches: Vec<Var> = self.dec_res[j]
                .iter()
                .map(|rb| rb.forward(tape, x, reg))
                .collect();
            x = tape.mean_of(&branches);
        }

        x = tape.leaky_relu(x, self.cfg.leaky_slope);
        x = self.out_conv.forward(tape, x, reg);
        x = tape.tanh(x);
        Ok(tape.reshape(x, &[l]))
    }

    /// Plain inference: template + mel condition -> waveform of the same
    /// length, values in (-1, 1).
    pub fn synthesize(&self, template: &SpeechTemplate, mel: &MelSpectrogram) -> Result<Waveform> {
        let t = Tensor::from_vec(&[template.samples.len()], template.samples.clone());
        let m = Tensor::from_vec(&[mel.n_mels, mel.n_frames], mel.log_mels.clone());
        let mut tape = Tape::new();
        let mut reg = Vec::new();
        let out = self.forward_t(&mut tape, &t, &m, &mut reg)?;
        Waveform::new(tape.value(out).data.clone(), template.sample_rate)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        self.input_conv.visit(f);
        let n = self.enc_down.len();
        for i in 0..n {
            self.enc_down[i].visit(f);
            self.enc_res[i].visit(f);
        }
        self.mel_conv.visit(f);
        self.fuse_conv.visit(f);
        for j in 0..n {
            self.dec_up[j].visit(f);
            self.dec_merge[j].visit(f);
            for rb in &self.dec_res[j] {
                rb.visit(f);
            }
        }
        self.out_conv.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.input_conv.visit_mut(f);
        let n = self.enc_down.len();
        for i in 0..n {
            self.enc_down[i].visit_mut(f);
            self.enc_res[i].visit_mut(f);
        }
        self.mel_conv.visit_mut(f);
        self.fuse_conv.visit_mut(f);
        for j in 0..n {
            self.dec_up[j].visit_mut(f);
            self.dec_merge[j].visit_mut(f);
            for rb in &mut self.dec_res[j] {
                rb.visit_mut(f);
            }
        }
        self.out_conv.visit_mut(f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.numel());
        n
    }

    pub fn param_tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Generator {
        build_generator(&GeneratorConfig::toy(8), 42).unwrap()
    }

    fn toy_inputs(l: usize, seed: u64) -> (Tensor, Tensor) {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_vec(&[l], (0..l).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let frames = l / 4;
        let m = Tensor::from_vec(
            &[8, frames],
            (0..8 * frames).map(|_| rng.gen_range(-5.0..0.0)).collect(),
        );
        (t, m)
    }

    #[test]
    fn default_config_matches_conditioning_hop() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.hop_size(), 256);
        assert!(cfg.validate(256).is_ok());
    }

    #[test]
    fn mismatched_rates_rejected() {
        let cfg = GeneratorConfig::toy(8);
        assert!(cfg.validate(256).is_err());
        let bad = GeneratorConfig {
            up_rates: vec![2, 8],
            ..GeneratorConfig::toy(8)
        };
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn toy_build_is_deterministic() {
        let a = toy();
        let b = toy();
        assert_eq!(a.param_count(), b.param_count());
        let mut pa = Vec::new();
        a.visit(&mut |t| pa.extend_from_slice(&t.data));
        let mut pb = Vec::new();
        b.visit(&mut |t| pb.extend_from_slice(&t.data));
        assert_eq!(pa, pb);
        assert!(a.param_count() > 0);
    }

    #[test]
    fn forward_preserves_length_and_stays_in_unit_interval() {
        let g = toy();
        for l in [64usize, 128, 4000] {
            let (t, m) = toy_inputs(l, l as u64);
            let mut tape = Tape::new();
            let mut reg = Vec::new();
            let y = g.forward_t(&mut tape, &t, &m, &mut reg).unwrap();
            let out = tape.value(y);
            assert_eq!(out.shape, vec![l]);
            assert!(out.data.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        }
    }

    #[test]
    fn forward_accepts_extra_center_padding_frame() {
        let g = toy();
        let (t, _) = toy_inputs(64, 1);
        // mel with L/hop + 1 frames, as produced by center-padded analysis
        let m = Tensor::from_vec(&[8, 17], vec![-1.0; 8 * 17]);
        let mut tape = Tape::new();
        let y = g.forward_t(&mut tape, &t, &m, &mut Vec::new()).unwrap();
        assert_eq!(tape.value(y).shape, vec![64]);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let g = toy();
        let (t, m) = toy_inputs(64, 2);
        let odd = Tensor::from_vec(&[63], vec![0.0; 63]);
        assert!(g.forward_t(&mut Tape::new(), &odd, &m, &mut Vec::new()).is_err());
        let short_mel = Tensor::from_vec(&[8, 15], vec![0.0; 120]);
        assert!(g
            .forward_t(&mut Tape::new(), &t, &short_mel, &mut Vec::new())
            .is_err());
        let wrong_mels = Tensor::from_vec(&[4, 16], vec![0.0; 64]);
        assert!(g
            .forward_t(&mut Tape::new(), &t, &wrong_mels, &mut Vec::new())
            .is_err());
    }

    #[test]
    fn registry_matches_visit_order() {
        let g = toy();
        let (t, m) = toy_inputs(64, 3);
        let mut tape = Tape::new();
        let mut reg = Vec::new();
        let _ = g.forward_t(&mut tape, &t, &m, &mut reg).unwrap();
        let mut shapes = Vec::new();
        g.visit(&mut |t| shapes.push(t.shape.clone()));
        assert_eq!(reg.len(), shapes.len());
        for (v, s) in reg.iter().zip(&shapes) {
            assert_eq!(&tape.value(*v).shape, s);
        }
    }

    #[test]
    fn conditioning_paths_are_live() {
        // changing the mel condition or the template noise must change the
        // output: no dead input path
        let g = toy();
        let (t, m) = toy_inputs(128, 4);
        let run = |t: &Tensor, m: &Tensor| -> Vec<f64> {
            let mut tape = Tape::new();
            let y = g.forward_t(&mut tape, t, m, &mut Vec::new()).unwrap();
            tape.value(y).data.clone()
        };
        let base = run(&t, &m);
        let zero_mel = Tensor::from_vec(&m.shape, vec![0.0; m.numel()]);
        assert_ne!(base, run(&t, &zero_mel));
        let (t2, _) = toy_inputs(128, 99);
        assert_ne!(base, run(&t2, &m));
    }

    #[test]
    fn batch_items_do_not_interact() {
        let g = toy();
        let (t1, m1) = toy_inputs(64, 10);
        let (t2, m2) = toy_inputs(64, 11);
        let mut tape = Tape::new();
        let y1 = g.forward_t(&mut tape, &t1, &m1, &mut Vec::new()).unwrap();
        let y2 = g.forward_t(&mut tape, &t2, &m2, &mut Vec::new()).unwrap();
        let joint = (tape.value(y1).data.clone(), tape.value(y2).data.clone());
        let mut ta = Tape::new();
        let a = g.forward_t(&mut ta, &t1, &m1, &mut Vec::new()).unwrap();
        let mut tb = Tape::new();
        let b = g.forward_t(&mut tb, &t2, &m2, &mut Vec::new()).unwrap();
        assert_eq!(joint.0, ta.value(a).data);
        assert_eq!(joint.1, tb.value(b).data);
    }

    #[test]
    fn decoder_receptive_field_covers_dilation_stack() {
        let cfg = GeneratorConfig::default();
        let need = cfg.decoder_kernels.iter().max().unwrap()
            * cfg.dilations.iter().max().unwrap()
            * 3;
        assert!(
            cfg.decoder_receptive_field() >= need,
            "field {} < {need}",
            cfg.decoder_receptive_field()
        );
        let toy = GeneratorConfig::toy(8);
        assert!(toy.decoder_receptive_field() >= 11 * 5 * 3);
    }
}
