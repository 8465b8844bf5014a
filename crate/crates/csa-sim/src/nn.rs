//! Minimal dense-layer plumbing for the codec networks: linear layers with
//! accumulated gradients and SGD-with-momentum updates. Everything is f64
//! and single-threaded so training traces are bit-reproducible per seed.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;

/// Fully connected layer; `w[out][in]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub grad_w: Vec<Vec<f64>>,
    pub grad_b: Vec<f64>,
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<f64>,
}

impl Linear {
    pub fn seeded(in_dim: usize, out_dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let w = (0..out_dim)
            .map(|_| (0..in_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect::<Vec<Vec<f64>>>();
        Self {
            b: vec![0.0; out_dim],
            grad_w: vec![vec![0.0; in_dim]; out_dim],
            grad_b: vec![0.0; out_dim],
            vel_w: vec![vec![0.0; in_dim]; out_dim],
            vel_b: vec![0.0; out_dim],
            w,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![vec![0.0; in_dim]; out_dim],
            b: vec![0.0; out_dim],
            grad_w: vec![vec![0.0; in_dim]; out_dim],
            grad_b: vec![0.0; out_dim],
            vel_w: vec![vec![0.0; in_dim]; out_dim],
            vel_b: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.w.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulate gradients for one sample and return dL/dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        for (o, &g) in dy.iter().enumerate() {
            self.grad_b[o] += g;
            for (i, &xi) in x.iter().enumerate() {
                self.grad_w[o][i] += g * xi;
                dx[i] += g * self.w[o][i];
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        for row in self.grad_w.iter_mut() {
            row.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grad_b.iter_mut().for_each(|g| *g = 0.0);
    }

    /// SGD-with-momentum step on the accumulated gradients, scaled by 1/n.
    pub fn step(&mut self, lr: f64, momentum: f64, n: usize) {
        let inv = 1.0 / n.max(1) as f64;
        for ((wrow, grow), vrow) in self.w.iter_mut().zip(&self.grad_w).zip(self.vel_w.iter_mut()) {
            for ((w, g), v) in wrow.iter_mut().zip(grow).zip(vrow.iter_mut()) {
                *v = momentum * *v + g * inv;
                *w -= lr * *v;
            }
        }
        for ((b, g), v) in self.b.iter_mut().zip(&self.grad_b).zip(self.vel_b.iter_mut()) {
            *v = momentum * *v + g * inv;
            *b -= lr * *v;
        }
    }

    pub fn params_finite(&self) -> bool {
        self.w.iter().flatten().all(|x| x.is_finite()) && self.b.iter().all(|x| x.is_finite())
    }
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Backprop through tanh given the forward output.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(v, g)| g * (1.0 - v * v)).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample; returns (loss, dL/dlogits).
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[label].max(1e-300).ln();
    let mut dl = p;
    dl[label] -= 1.0;
    (loss, dl)
}
