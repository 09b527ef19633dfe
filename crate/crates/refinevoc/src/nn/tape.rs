//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Each operation records its output value and a closure that scatters the
//! incoming gradient to its inputs. `backward` seeds a scalar root with 1
//! and replays the tape in reverse.

use rustfft::{num_complex::Complex, FftPlanner};

use super::tensor::Tensor;

type BackFn = Box<dyn Fn(&Tensor, &mut [Tensor])>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.backs.push(back);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Gradients of a scalar `root` with respect to every tape node.
    pub fn backward(&self, root: Var) -> Vec<Tensor> {
        assert_eq!(self.values[root.0].numel(), 1, "backward root must be scalar");
        let mut grads: Vec<Tensor> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(&v.shape))
            .collect();
        grads[root.0].data[0] = 1.0;
        for i in (0..=root.0).rev() {
            if let Some(back) = &self.backs[i] {
                if grads[i].data.iter().any(|&g| g != 0.0) {
                    let g = grads[i].clone();
                    back(&g, &mut grads);
                }
            }
        }
        grads
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.shape, vb.shape);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv;
                    grads[b.0].data[i] += gv;
                }
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.shape, vb.shape);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv;
                    grads[b.0].data[i] -= gv;
                }
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
        assert_eq!(va.shape, vb.shape);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv * vb.data[i];
                    grads[b.0].data[i] += gv * va.data[i];
                }
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = &self.values[a.0];
        let out = Tensor::from_vec(&va.shape, va.data.iter().map(|x| x * c).collect());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv * c;
                }
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.numel(), shape.iter().product::<usize>());
        let out = Tensor::from_vec(shape, va.data.clone());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv;
                }
            })),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let va = self.values[a.0].clone();
        let data = va
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    let d = if va.data[i] > 0.0 { 1.0 } else { slope };
                    grads[a.0].data[i] += gv * d;
                }
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let y: Vec<f64> = va.data.iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_vec(&va.shape, y.clone());
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    grads[a.0].data[i] += gv * (1.0 - y[i] * y[i]);
                }
            })),
        )
    }

    /// Overflow-safe softplus: max(x,0) + ln(1 + e^(-|x|)).
    pub fn softplus(&mut self, a: Var) -> Var {
        let va = self.values[a.0].clone();
        let data = va
            .data
            .iter()
            .map(|&x| x.max(0.0) + (-x.abs()).exp().ln_1p())
            .collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    let x = va.data[i];
                    let sig = if x >= 0.0 {
                        1.0 / (1.0 + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (1.0 + e)
                    };
                    grads[a.0].data[i] += gv * sig;
                }
            })),
        )
    }

    /// log(max(x, floor)); zero gradient where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        let va = self.values[a.0].clone();
        let data = va.data.iter().map(|&x| x.max(floor).ln()).collect();
        let out = Tensor::from_vec(&va.shape, data);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                for (i, &gv) in g.data.iter().enumerate() {
                    let x = va.data[i];
                    if x > floor {
                        grads[a.0].data[i] += gv / x;
                    }
                }
            })),
        )
    }

    // ---- reductions ----

    pub fn mean(&mut self, a: Var) -> Var {
        let va = &self.values[a.0];
        let n = va.numel() as f64;
        let out = Tensor::scalar(va.data.iter().sum::<f64>() / n);
        self.push(
            out,
            Some(Box::new(move |g, grads| {
                let gv = g.data[0] / n;
                for x in grads[a.0].data.iter_mut() {
                    *x += gv;
                }
            })),
        )
    }

    /// mean((a - b)^2)
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
        assert_eq!(va.shape, vb.shape);
        let n = va.numel() as f64;
        let val = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(val),
            Some(Box::new(move |g, grads| {
                let gv = g.data[0];
                for i in 0..va.data.len() {
                    let d = 2.0 * (va.data[i] - vb.data[i]) / n;
                    grads[a.0].data[i] += gv * d;
                    grads[b.0].data[i] -= gv * d;
                }
            })),
        )
    }

    /// mean(|a - b|); subgradient 0 at exact equality.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.0].clone(), self.values[b.0].clone());
        assert_eq!(va.shape, vb.shape);
        let n = va.numel() as f64;
        let val = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(val),
            Some(Box::new(move |g, grads| {
                let gv = g.data[0];
                for i in 0..va.data.len() {
                    let s = (va.data[i] - vb.data[i]).signum();
                    let s = if va.data[i] == vb.data[i] { 0.0 } else { s };
                    grads[a.0].data[i] += gv * s / n;
                    grads[b.0].data[i] -= gv * s / n;
                }
            })),
        )
    }

    /// Mean of several same-shape vars.
    pub fn mean_of(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        self.scale(acc, 1.0 / vars.len() as f64)
    }

    /// Concatenate along axis 0 (leading dimension).
    pub fn concat0(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(va.shape[1..], vb.shape[1..], "trailing dims must match");
        let mut shape = va.shape.clone();
        shape[0] += vb.shape[0];
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let na = va.data.len();
        self.push(
            Tensor::from_vec(&shape, data),
            Some(Box::new(move |g, grads| {
                for i in 0..na {
                    grads[a.0].data[i] += g.data[i];
                }
                for i in na..g.data.len() {
                    grads[b.0].data[i - na] += g.data[i];
                }
            })),
        )
    }

    // ---- pooling ----

    /// 1D max pool over a [L] signal; frame t = max over
    /// [t*hop, t*hop + win), tail frames pool the remainder.
    pub fn max_pool1d(&mut self, a: Var, win: usize, hop: usize) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.shape.len(), 1);
        let n = va.numel();
        let n_frames = n.div_ceil(hop);
        let mut out = Vec::with_capacity(n_frames);
        let mut arg = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = t * hop;
            let end = (start + win).min(n);
            let (mut best_i, mut best) = (start, f64::NEG_INFINITY);
            for i in start..end {
                if va.data[i] > best {
                    best = va.data[i];
                    best_i = i;
                }
            }
            out.push(best);
            arg.push(best_i);
        }
        self.push(
            Tensor::from_vec(&[n_frames], out),
            Some(Box::new(move |g, grads| {
                for (t, &i) in arg.iter().enumerate() {
                    grads[a.0].data[i] += g.data[t];
                }
            })),
        )
    }

    // ---- convolutions ----

    /// 1D convolution with 'same'-style padding.
    /// x: [C_in, L], w: [C_out, C_in, K], b: [C_out] -> [C_out, ceil(L/stride)]
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, dilation: usize) -> Var {
        let vx = self.values[x.0].clone();
        let vw = self.values[w.0].clone();
        let vb = self.values[b.0].clone();
        let (c_in, l) = (vx.shape[0], vx.shape[1]);
        let (c_out, k) = (vw.shape[0], vw.shape[2]);
        assert_eq!(vw.shape[1], c_in);
        assert_eq!(vb.shape, vec![c_out]);
        let out_l = l.div_ceil(stride);
        let extent = (k - 1) * dilation + 1;
        let total_pad = ((out_l - 1) * stride + extent).saturating_sub(l);
        let pad_left = total_pad / 2;

        let mut out = vec![0.0; c_out * out_l];
        for co in 0..c_out {
            for t in 0..out_l {
                let mut acc = vb.data[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = t * stride + kk * dilation;
                        if pos < pad_left {
                            continue;
                        }
                        let i = pos - pad_left;
                        if i < l {
                            acc += vw.data[(co * c_in + ci) * k + kk] * vx.data[ci * l + i];
                        }
                    }
                }
                out[co * out_l + t] = acc;
            }
        }
        self.push(
            Tensor::from_vec(&[c_out, out_l], out),
            Some(Box::new(move |g, grads| {
                for co in 0..c_out {
                    for t in 0..out_l {
                        let gv = g.data[co * out_l + t];
                        if gv == 0.0 {
                            continue;
                        }
                        grads[b.0].data[co] += gv;
                        for ci in 0..c_in {
                            for kk in 0..k {
                                let pos = t * stride + kk * dilation;
                                if pos < pad_left {
                                    continue;
                                }
                                let i = pos - pad_left;
                                if i < l {
                                    grads[w.0].data[(co * c_in + ci) * k + kk] +=
                                        gv * vx.data[ci * l + i];
                                    grads[x.0].data[ci * l + i] +=
                                        gv * vw.data[(co * c_in + ci) * k + kk];
                                }
                            }
                        }
                    }
                }
            })),
        )
    }

    /// Transposed 1D convolution, output cropped to exactly L*stride.
    /// x: [C_in, L], w: [C_in, C_out, K] (K >= stride), b: [C_out]
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let vx = self.values[x.0].clone();
        let vw = self.values[w.0].clone();
        let vb = self.values[b.0].clone();
        let (c_in, l) = (vx.shape[0], vx.shape[1]);
        let (c_out, k) = (vw.shape[1], vw.shape[2]);
        assert_eq!(vw.shape[0], c_in);
        assert!(k >= stride, "kernel must cover the stride");
        let out_l = l * stride;
        let crop = (k - stride) / 2;

        let mut out = vec![0.0; c_out * out_l];
        for co in 0..c_out {
            for o in out.iter_mut().skip(co * out_l).take(out_l) {
                *o = vb.data[co];
            }
        }
        for ci in 0..c_in {
            for i in 0..l {
                let xv = vx.data[ci * l + i];
                if xv == 0.0 {
                    continue;
                }
                for co in 0..c_out {
                    for kk in 0..k {
                        let pos = i * stride + kk;
                        if pos < crop {
                            continue;
                        }
                        let o = pos - crop;
                        if o < out_l {
                            out[co * out_l + o] += xv * vw.data[(ci * c_out + co) * k + kk];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_vec(&[c_out, out_l], out),
            Some(Box::new(move |g, grads| {
                for co in 0..c_out {
                    for o in 0..out_l {
                        grads[b.0].data[co] += g.data[co * out_l + o];
                    }
                }
                for ci in 0..c_in {
                    for i in 0..l {
                        for co in 0..c_out {
                            for kk in 0..k {
                                let pos = i * stride + kk;
                                if pos < crop {
                                    continue;
                                }
                                let o = pos - crop;
                                if o < out_l {
                                    let gv = g.data[co * out_l + o];
                                    grads[w.0].data[(ci * c_out + co) * k + kk] +=
                                        gv * vx.data[ci * l + i];
                                    grads[x.0].data[ci * l + i] +=
                                        gv * vw.data[(ci * c_out + co) * k + kk];
                                }
                            }
                        }
                    }
                }
            })),
        )
    }

    /// 2D convolution with explicit symmetric padding.
    /// x: [C_in, H, W], w: [C_out, C_in, Kh, Kw], b: [C_out]
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Var {
        let vx = self.values[x.0].clone();
        let vw = self.values[w.0].clone();
        let vb = self.values[b.0].clone();
        let (c_in, h, wd) = (vx.shape[0], vx.shape[1], vx.shape[2]);
        let (c_out, kh, kw) = (vw.shape[0], vw.shape[2], vw.shape[3]);
        assert_eq!(vw.shape[1], c_in);
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        let h_out = (h + 2 * ph).saturating_sub(kh) / sh + 1;
        let w_out = (wd + 2 * pw).saturating_sub(kw) / sw + 1;
        assert!(h + 2 * ph >= kh && wd + 2 * pw >= kw, "input too small for kernel");

        let mut out = vec![0.0; c_out * h_out * w_out];
        for co in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = vb.data[co];
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = oy * sh + ky;
                            if iy < ph || iy - ph >= h {
                                continue;
                            }
                            let iy = iy - ph;
                            for kx in 0..kw {
                                let ix = ox * sw + kx;
                                if ix < pw || ix - pw >= wd {
                                    continue;
                                }
                                let ix = ix - pw;
                                acc += vw.data[((co * c_in + ci) * kh + ky) * kw + kx]
                                    * vx.data[(ci * h + iy) * wd + ix];
                            }
                        }
                    }
                    out[(co * h_out + oy) * w_out + ox] = acc;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[c_out, h_out, w_out], out),
            Some(Box::new(move |g, grads| {
                for co in 0..c_out {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let gv = g.data[(co * h_out + oy) * w_out + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            grads[b.0].data[co] += gv;
                            for ci in 0..c_in {
                                for ky in 0..kh {
                                    let iy = oy * sh + ky;
                                    if iy < ph || iy - ph >= h {
                                        continue;
                                    }
                                    let iy = iy - ph;
                                    for kx in 0..kw {
                                        let ix = ox * sw + kx;
                                        if ix < pw || ix - pw >= wd {
                                            continue;
                                        }
                                        let ix = ix - pw;
                                        grads[w.0].data[((co * c_in + ci) * kh + ky) * kw + kx] +=
                                            gv * vx.data[(ci * h + iy) * wd + ix];
                                        grads[x.0].data[(ci * h + iy) * wd + ix] +=
                                            gv * vw.data[((co * c_in + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            })),
        )
    }

    /// Weight normalization: w = g * v / ||v|| with the norm taken per
    /// leading-axis slice. v: [C_out, ...], g: [C_out].
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Var {
        let vv = self.values[v.0].clone();
        let vg = self.values[g.0].clone();
        let c_out = vv.shape[0];
        assert_eq!(vg.shape, vec![c_out]);
        let per = vv.numel() / c_out;
        let norms: Vec<f64> = (0..c_out)
            .map(|c| {
                vv.data[c * per..(c + 1) * per]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-12)
            })
            .collect();
        let mut out = vec![0.0; vv.numel()];
        for c in 0..c_out {
            let s = vg.data[c] / norms[c];
            for i in 0..per {
                out[c * per + i] = vv.data[c * per + i] * s;
            }
        }
        self.push(
            Tensor::from_vec(&vv.shape, out),
            Some(Box::new(move |gr, grads| {
                for c in 0..c_out {
                    let norm = norms[c];
                    let slice = &vv.data[c * per..(c + 1) * per];
                    let gslice = &gr.data[c * per..(c + 1) * per];
                    let dot: f64 = gslice.iter().zip(slice).map(|(a, b)| a * b).sum();
                    // d/dg = (gr . v)/||v||
                    grads[g.0].data[c] += dot / norm;
                    // d/dv = g/||v|| * (gr - (gr . v_hat) v_hat)
                    let s = vg.data[c] / norm;
                    for i in 0..per {
                        let vhat = slice[i] / norm;
                        grads[v.0].data[c * per + i] += s * (gslice[i] - dot / norm * vhat);
                    }
                }
            })),
        )
    }

    /// Fixed-matrix product: out = M x, M constant [rows x cols],
    /// x: [cols, frames].
    pub fn matmul_const(&mut self, m: std::rc::Rc<Vec<f64>>, rows: usize, x: Var) -> Var {
        let vx = &self.values[x.0];
        let (cols, frames) = (vx.shape[0], vx.shape[1]);
        assert_eq!(m.len(), rows * cols);
        let mut out = vec![0.0; rows * frames];
        for r in 0..rows {
            for c in 0..cols {
                let w = m[r * cols + c];
                if w == 0.0 {
                    continue;
                }
                for t in 0..frames {
                    out[r * frames + t] += w * vx.data[c * frames + t];
                }
            }
        }
        self.push(
            Tensor::from_vec(&[rows, frames], out),
            Some(Box::new(move |g, grads| {
                for r in 0..rows {
                    for c in 0..cols {
                        let w = m[r * cols + c];
                        if w == 0.0 {
                            continue;
                        }
                        for t in 0..frames {
                            grads[x.0].data[c * frames + t] += w * g.data[r * frames + t];
                        }
                    }
                }
            })),
        )
    }

    /// Right-pad a [L] signal to a multiple of `period` and view it as a
    /// [1, L'/period, period] grid.
    pub fn period_reshape(&mut self, a: Var, period: usize) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.shape.len(), 1);
        let n = va.numel();
        let rows = n.div_ceil(period);
        let mut data = vec![0.0; rows * period];
        data[..n].copy_from_slice(&va.data);
        self.push(
            Tensor::from_vec(&[1, rows, period], data),
            Some(Box::new(move |g, grads| {
                for i in 0..n {
                    grads[a.0].data[i] += g.data[i];
                }
            })),
        )
    }

    /// Magnitude STFT of a [L] signal: Hann window, reflect center
    /// padding, frames at multiples of `hop`. Output [fft/2+1, n_frames].
    pub fn stft_mag(&mut self, a: Var, fft_size: usize, win_size: usize, hop: usize) -> Var {
        use crate::signal::stft_support::{hann_window, reflect_index, reflect_pad};
        let va = &self.values[a.0];
        assert_eq!(va.shape.len(), 1);
        let n = va.numel();
        let n_bins = fft_size / 2 + 1;
        let n_frames = n / hop + 1;
        let pad = fft_size / 2;
        let padded = reflect_pad(&va.data, pad);
        let window = hann_window(win_size);
        let win_off = (fft_size - win_size) / 2;

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(fft_size);
        let mut mags = vec![0.0; n_bins * n_frames];
        let mut res = vec![0.0; n_bins * n_frames];
        let mut ims = vec![0.0; n_bins * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        for t in 0..n_frames {
            for v in buf.iter_mut() {
                *v = Complex::new(0.0, 0.0);
            }
            for (i, &w) in window.iter().enumerate() {
                buf[win_off + i] = Complex::new(padded[t * hop + win_off + i] * w, 0.0);
            }
            fft.process(&mut buf);
            for k in 0..n_bins {
                mags[k * n_frames + t] = buf[k].norm();
                res[k * n_frames + t] = buf[k].re;
                ims[k * n_frames + t] = buf[k].im;
            }
        }
        let mags_out = mags.clone();
        self.push(
            Tensor::from_vec(&[n_bins, n_frames], mags_out),
            Some(Box::new(move |g, grads| {
                let mut planner = FftPlanner::new();
                let ifft = planner.plan_fft_inverse(fft_size);
                let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
                let mut padded_grad = vec![0.0; n + 2 * pad];
                for t in 0..n_frames {
                    for v in buf.iter_mut() {
                        *v = Complex::new(0.0, 0.0);
                    }
                    let mut any = false;
                    for k in 0..n_bins {
                        let idx = k * n_frames + t;
                        let m = mags[idx];
                        if m > 1e-300 && g.data[idx] != 0.0 {
                            let s = g.data[idx] / m;
                            buf[k] = Complex::new(s * res[idx], s * ims[idx]);
                            any = true;
                        }
                    }
                    if !any {
                        continue;
                    }
                    // adjoint of the half-spectrum DFT: real part of the
                    // unnormalized inverse transform of the (non-symmetrized)
                    // gradient spectrum
                    ifft.process(&mut buf);
                    for (i, &w) in window.iter().enumerate() {
                        padded_grad[t * hop + win_off + i] += buf[win_off + i].re * w;
                    }
                }
                // fold reflect padding back onto the interior
                for (j, &gv) in padded_grad.iter().enumerate() {
                    if gv != 0.0 {
                        let src = reflect_index(j as i64 - pad as i64, n);
                        grads[a.0].data[src] += gv;
                    }
                }
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MEL_LOG_FLOOR;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(scalar fn)/d(input) for one input var.
    fn check_input_grad<F>(build: F, input: Vec<f64>, shape: &[usize], tol: f64)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(shape, input.clone()));
        let out = build(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads[x.0].clone();

        let eps = 1e-5;
        for i in 0..input.len() {
            let eval = |v: f64| {
                let mut t = Tape::new();
                let mut d = input.clone();
                d[i] = v;
                let xi = t.leaf(Tensor::from_vec(shape, d));
                let o = build(&mut t, xi);
                t.value(o).item()
            };
            let fd = (eval(input[i] + eps) - eval(input[i] - eps)) / (2.0 * eps);
            let an = analytic.data[i];
            let denom = (fd.abs() + an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom < tol,
                "coord {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn elementwise_and_reduction_grads() {
        let x = rand_vec(12, 1);
        check_input_grad(
            |t, v| {
                let a = t.scale(v, 1.7);
                let b = t.tanh(a);
                let c = t.mul(b, v);
                t.mean(c)
            },
            x,
            &[12],
            1e-5,
        );
    }

    #[test]
    fn softplus_and_leaky_grads() {
        let x = rand_vec(10, 2);
        check_input_grad(
            |t, v| {
                let a = t.leaky_relu(v, 0.1);
                let b = t.neg(a);
                let c = t.softplus(b);
                t.mean(c)
            },
            x,
            &[10],
            1e-5,
        );
    }

    #[test]
    fn mse_and_mad_grads() {
        let x = rand_vec(8, 3);
        check_input_grad(
            |t, v| {
                let target = t.leaf(Tensor::from_vec(&[8], vec![0.3; 8]));
                let a = t.mse(v, target);
                let b = t.mean_abs_diff(v, target);
                t.add(a, b)
            },
            x,
            &[8],
            1e-5,
        );
    }

    #[test]
    fn conv1d_grads() {
        let x = rand_vec(2 * 16, 4);
        let w = rand_vec(3 * 2 * 5, 5);
        let b = rand_vec(3, 6);
        check_input_grad(
            move |t, v| {
                let wv = t.leaf(Tensor::from_vec(&[3, 2, 5], w.clone()));
                let bv = t.leaf(Tensor::from_vec(&[3], b.clone()));
                let y = t.conv1d(v, wv, bv, 2, 3);
                t.mean(y)
            },
            x,
            &[2, 16],
            1e-5,
        );
    }

    #[test]
    fn conv1d_weight_grads() {
        let x = rand_vec(2 * 12, 7);
        let w = rand_vec(2 * 2 * 3, 8);
        check_input_grad(
            move |t, v| {
                let xv = t.leaf(Tensor::from_vec(&[2, 12], x.clone()));
                let bv = t.leaf(Tensor::zeros(&[2]));
                let y = t.conv1d(xv, v, bv, 1, 1);
                let sq = t.mul(y, y);
                t.mean(sq)
            },
            w,
            &[2, 2, 3],
            1e-5,
        );
    }

    #[test]
    fn conv_transpose1d_grads_and_length() {
        let x = rand_vec(2 * 6, 9);
        let w = rand_vec(2 * 3 * 4, 10);
        // length contract: out = L * stride
        {
            let mut t = Tape::new();
            let xv = t.leaf(Tensor::from_vec(&[2, 6], x.clone()));
            let wv = t.leaf(Tensor::from_vec(&[2, 3, 4], w.clone()));
            let bv = t.leaf(Tensor::zeros(&[3]));
            let y = t.conv_transpose1d(xv, wv, bv, 2);
            assert_eq!(t.value(y).shape, vec![3, 12]);
        }
        check_input_grad(
            move |t, v| {
                let wv = t.leaf(Tensor::from_vec(&[2, 3, 4], w.clone()));
                let bv = t.leaf(Tensor::zeros(&[3]));
                let y = t.conv_transpose1d(v, wv, bv, 2);
                let sq = t.mul(y, y);
                t.mean(sq)
            },
            x,
            &[2, 6],
            1e-5,
        );
    }

    #[test]
    fn conv2d_grads() {
        let x = rand_vec(2 * 6 * 5, 11);
        let w = rand_vec(2 * 2 * 3 * 3, 12);
        check_input_grad(
            move |t, v| {
                let wv = t.leaf(Tensor::from_vec(&[2, 2, 3, 3], w.clone()));
                let bv = t.leaf(Tensor::zeros(&[2]));
                let y = t.conv2d(v, wv, bv, (2, 1), (1, 1));
                let sq = t.mul(y, y);
                t.mean(sq)
            },
            x,
            &[2, 6, 5],
            1e-5,
        );
    }

    #[test]
    fn weight_norm_grads_and_decomposition() {
        let v = rand_vec(3 * 4, 13);
        let g = vec![0.7, 1.3, 0.4];
        // decomposition: each row of w has norm g[c]
        {
            let mut t = Tape::new();
            let vv = t.leaf(Tensor::from_vec(&[3, 4], v.clone()));
            let gv = t.leaf(Tensor::from_vec(&[3], g.clone()));
            let w = t.weight_norm(vv, gv);
            for c in 0..3 {
                let norm: f64 = t.value(w).data[c * 4..(c + 1) * 4]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                assert!((norm - g[c].abs()).abs() < 1e-6);
            }
        }
        check_input_grad(
            move |t, var| {
                let gvar = t.leaf(Tensor::from_vec(&[3], g.clone()));
                let w = t.weight_norm(var, gvar);
                let sq = t.mul(w, w);
                let m = t.mean(sq);
                let lin = t.mean(w);
                t.add(m, lin)
            },
            v,
            &[3, 4],
            1e-4,
        );
    }

    #[test]
    fn max_pool_grads() {
        let x = rand_vec(20, 14);
        check_input_grad(
            |t, v| {
                let p = t.max_pool1d(v, 4, 3);
                t.mean(p)
            },
            x,
            &[20],
            1e-5,
        );
    }

    #[test]
    fn stft_mag_grads_match_finite_differences() {
        let x = rand_vec(64, 15);
        check_input_grad(
            |t, v| {
                let s = t.stft_mag(v, 16, 16, 4);
                t.mean(s)
            },
            x,
            &[64],
            1e-4,
        );
    }

    #[test]
    fn stft_mag_matches_signal_module() {
        use crate::signal::{stft_magnitude, MelParamSet, Waveform};
        let data = rand_vec(256, 16);
        let w = Waveform::new(data.clone(), 8000).unwrap();
        let p = MelParamSet {
            fft_size: 64,
            win_size: 32,
            hop_size: 16,
            n_mels: 4,
            f_min: 20.0,
            f_max: 4000.0,
        };
        let reference = stft_magnitude(&w, &p).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(Tensor::from_vec(&[256], data));
        let s = t.stft_mag(v, 64, 32, 16);
        assert_eq!(t.value(s).shape, vec![reference.n_bins, reference.n_frames]);
        for (a, b) in t.value(s).data.iter().zip(&reference.magnitudes) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_floor_and_matmul_grads() {
        let x: Vec<f64> = rand_vec(12, 17).iter().map(|v| v.abs() + 0.05).collect();
        let m = std::rc::Rc::new(rand_vec(3 * 4, 18));
        check_input_grad(
            move |t, v| {
                let y = t.matmul_const(m.clone(), 3, v);
                let ly = t.log_floor(y, MEL_LOG_FLOOR);
                let sq = t.mul(ly, ly);
                t.mean(sq)
            },
            x,
            &[4, 3],
            1e-4,
        );
    }

    #[test]
    fn period_reshape_pads_and_routes_grads() {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::from_vec(&[7], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let r = t.period_reshape(v, 3);
        assert_eq!(t.value(r).shape, vec![1, 3, 3]);
        assert_eq!(t.value(r).data[6], 7.0);
        assert_eq!(t.value(r).data[7], 0.0);
        assert_eq!(t.value(r).data[8], 0.0);
        let m = t.mean(r);
        let grads = t.backward(m);
        for i in 0..7 {
            assert!((grads[v.0].data[i] - 1.0 / 9.0).abs() < 1e-12);
        }
    }
}
