use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Adam optimizer state over a fixed list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, param_sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }

    /// Advance the step counter; call once per optimization step, before
    /// the per-tensor [`Adam::update`] calls.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply the update for parameter tensor `i` (visit order).
    pub fn update(&mut self, i: usize, param: &mut Tensor, grad: &Tensor) {
        assert_eq!(param.data.len(), self.m[i].len());
        assert_eq!(grad.data.len(), self.m[i].len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for j in 0..param.data.len() {
            let g = grad.data[j];
            self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
            self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i][j] / bc1;
            let vhat = self.v[i][j] / bc2;
            param.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.begin_step();
        for (i, p) in params.iter_mut().enumerate() {
            self.update(i, p, &grads[i]);
        }
    }
}
