//! Weight-normalized convolution layers and the dilated residual block.
//!
//! Every layer stores plain tensors and, during `forward`, pushes them onto
//! the tape as leaves while recording the resulting `Var`s in a registry.
//! The registry order always equals the `visit`/`visit_mut` order, which is
//! what lets the optimizer pair flattened gradients with parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Tape, Tensor, Var};

/// Uniform init in `±1/sqrt(fan_in)` (the usual conv default).
fn init_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Per-leading-row L2 norms, used to seed the magnitude so the initial
/// effective weight equals the direction tensor.
fn row_norms(v: &Tensor) -> Tensor {
    let c0 = v.shape[0];
    let per = v.numel() / c0;
    let data = (0..c0)
        .map(|c| {
            v.data[c * per..(c + 1) * per]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(1e-12)
        })
        .collect();
    Tensor::from_vec(&[c0], data)
}

/// 1-D convolution with weight normalization: w = g * v/||v|| per output
/// channel, 'same' padding.
#[derive(Debug, Clone)]
pub struct WnConv1d {
    pub v: Tensor,
    pub g: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub dilation: usize,
}

impl WnConv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let v = init_tensor(&[c_out, c_in, kernel], c_in * kernel, rng);
        let g = row_norms(&v);
        WnConv1d {
            v,
            g,
            b: Tensor::zeros(&[c_out]),
            stride,
            dilation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Var {
        let v = tape.leaf(self.v.clone());
        let g = tape.leaf(self.g.clone());
        let b = tape.leaf(self.b.clone());
        reg.extend([v, g, b]);
        let w = tape.weight_norm(v, g);
        tape.conv1d(x, w, b, self.stride, self.dilation)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.v);
        f(&self.g);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.v);
        f(&mut self.g);
        f(&mut self.b);
    }
}

/// Transposed 1-D convolution with weight normalization (norm taken over
/// the leading input-channel rows of v, matching the storage layout).
#[derive(Debug, Clone)]
pub struct WnConvT1d {
    pub v: Tensor,
    pub g: Tensor,
    pub b: Tensor,
    pub stride: usize,
}

impl WnConvT1d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel >= stride);
        let v = init_tensor(&[c_in, c_out, kernel], c_in * kernel / stride, rng);
        let g = row_norms(&v);
        WnConvT1d {
            v,
            g,
            b: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Var {
        let v = tape.leaf(self.v.clone());
        let g = tape.leaf(self.g.clone());
        let b = tape.leaf(self.b.clone());
        reg.extend([v, g, b]);
        let w = tape.weight_norm(v, g);
        tape.conv_transpose1d(x, w, b, self.stride)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.v);
        f(&self.g);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.v);
        f(&mut self.g);
        f(&mut self.b);
    }
}

/// 2-D convolution with weight normalization, explicit padding.
#[derive(Debug, Clone)]
pub struct WnConv2d {
    pub v: Tensor,
    pub g: Tensor,
    pub b: Tensor,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl WnConv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let v = init_tensor(&[c_out, c_in, kernel.0, kernel.1], c_in * kernel.0 * kernel.1, rng);
        let g = row_norms(&v);
        WnConv2d {
            v,
            g,
            b: Tensor::zeros(&[c_out]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Var {
        let v = tape.leaf(self.v.clone());
        let g = tape.leaf(self.g.clone());
        let b = tape.leaf(self.b.clone());
        reg.extend([v, g, b]);
        let w = tape.weight_norm(v, g);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.v);
        f(&self.g);
        f(&self.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.v);
        f(&mut self.g);
        f(&mut self.b);
    }
}

/// Residual block: three sub-blocks in series, each
/// LeakyReLU -> dilated conv -> LeakyReLU -> conv (dilation 1), with a
/// residual addition around every sub-block.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub subs: Vec<(WnConv1d, WnConv1d)>,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub slope: f64,
}

impl ResBlock {
    pub fn new(
        channels: usize,
        kernel: usize,
        dilations: &[usize],
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let subs = dilations
            .iter()
            .map(|&d| {
                (
                    WnConv1d::new(channels, channels, kernel, 1, d, rng),
                    WnConv1d::new(channels, channels, kernel, 1, 1, rng),
                )
            })
            .collect();
        ResBlock {
            subs,
            kernel,
            dilations: dilations.to_vec(),
            slope,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, reg: &mut Vec<Var>) -> Var {
        let mut x = x;
        for (c1, c2) in &self.subs {
            let t = tape.leaky_relu(x, self.slope);
            let t = c1.forward(tape, t, reg);
            let t = tape.leaky_relu(t, self.slope);
            let t = c2.forward(tape, t, reg);
            x = tape.add(x, t);
        }
        x
    }

    /// Receptive-field growth in input samples contributed by this block.
    pub fn receptive_field(&self) -> usize {
        self.dilations
            .iter()
            .map(|d| (self.kernel - 1) * d + (self.kernel - 1))
            .sum()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for (c1, c2) in &self.subs {
            c1.visit(f);
            c2.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for (c1, c2) in &mut self.subs {
            c1.visit_mut(f);
            c2.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_registry_matches_visit_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = WnConv1d::new(2, 4, 3, 1, 1, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 8], vec![0.1; 16]));
        let mut reg = Vec::new();
        let _ = layer.forward(&mut tape, x, &mut reg);
        let mut shapes = Vec::new();
        layer.visit(&mut |t| shapes.push(t.shape.clone()));
        assert_eq!(reg.len(), shapes.len());
        for (v, s) in reg.iter().zip(&shapes) {
            assert_eq!(&tape.value(*v).shape, s);
        }
    }

    #[test]
    fn weight_norm_init_reproduces_direction() {
        // with g = ||v|| per row, the effective weight equals v
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = WnConv1d::new(3, 5, 7, 1, 2, &mut rng);
        let mut tape = Tape::new();
        let v = tape.leaf(layer.v.clone());
        let g = tape.leaf(layer.g.clone());
        let w = tape.weight_norm(v, g);
        for (a, b) in tape.value(w).data.iter().zip(&layer.v.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_norm_decomposition_holds_after_update() {
        // perturb v and g arbitrarily; effective weight must still equal
        // g * v / ||v|| row-wise within 1e-6
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = WnConv1d::new(2, 3, 5, 1, 1, &mut rng);
        for (i, x) in layer.v.data.iter_mut().enumerate() {
            *x += 0.01 * (i as f64).sin();
        }
        for (i, x) in layer.g.data.iter_mut().enumerate() {
            *x *= 1.0 + 0.1 * (i as f64 + 1.0);
        }
        let mut tape = Tape::new();
        let v = tape.leaf(layer.v.clone());
        let g = tape.leaf(layer.g.clone());
        let w = tape.weight_norm(v, g);
        let per = layer.v.numel() / layer.v.shape[0];
        for c in 0..layer.v.shape[0] {
            let row = &layer.v.data[c * per..(c + 1) * per];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (k, &x) in row.iter().enumerate() {
                let expect = layer.g.data[c] * x / norm;
                let got = tape.value(w).data[c * per + k];
                assert!((got - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resblock_preserves_shape_and_registry_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = ResBlock::new(4, 3, &[1, 3, 5], 0.1, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[4, 16], vec![0.05; 64]));
        let mut reg = Vec::new();
        let y = block.forward(&mut tape, x, &mut reg);
        assert_eq!(tape.value(y).shape, vec![4, 16]);
        let mut n = 0;
        block.visit(&mut |_| n += 1);
        assert_eq!(reg.len(), n);
        // 3 sub-blocks x 2 convs x 3 tensors
        assert_eq!(n, 18);
    }

    #[test]
    fn resblock_receptive_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = ResBlock::new(2, 7, &[1, 3, 5], 0.1, &mut rng);
        // sum over sub-blocks of (k-1)*d + (k-1)
        assert_eq!(block.receptive_field(), 6 * 1 + 6 + 6 * 3 + 6 + 6 * 5 + 6);
    }
}
