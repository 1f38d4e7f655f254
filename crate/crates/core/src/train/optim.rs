//! Adam and the step-decay learning-rate schedule.

use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLr {
    pub lr0: f64,
    pub step: usize,
    pub gamma: f64,
}

impl StepLr {
    /// `lr0 * gamma^floor(epoch / step)`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi((epoch / self.step) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |_: ()| params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    /// One update; tensors rejected by `trainable` keep their values.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64, trainable: impl Fn(&str) -> bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, (name, p)) in params.names.iter().zip(&mut params.tensors).enumerate() {
            if !trainable(name) {
                continue;
            }
            let g = &grads.tensors[i].data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
