//! Semantic data augmentation: per-class feature covariance tracking, a
//! covariance-prediction network, and the augmented training loss whose
//! gradient updates the receiver-side networks.
//!
//! The loss is the closed-form expected cross-entropy upper bound under
//! Gaussian class-conditional feature augmentation with diagonal
//! covariances: the logit of class j gains (lambda/2) * (w_j - w_y)' S_y
//! (w_j - w_y) in the denominator.

use crate::error::SimError;
use crate::nn::{softmax, Linear};
use crate::rng::Rng;

/// Streaming per-class diagonal moments (Welford), mergeable across batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCovarianceBank {
    pub dim: usize,
    counts: Vec<u64>,
    means: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
}

impl ClassCovarianceBank {
    pub fn new(n_classes: usize, dim: usize) -> Self {
        Self {
            dim,
            counts: vec![0; n_classes],
            means: vec![vec![0.0; dim]; n_classes],
            m2: vec![vec![0.0; dim]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    /// Fold a batch of features into the per-class moments.
    pub fn update(&mut self, features: &[Vec<f64>], labels: &[usize]) -> Result<(), SimError> {
        if features.len() != labels.len() {
            return Err(SimError::DimensionMismatch("features/labels length mismatch".into()));
        }
        for (f, &y) in features.iter().zip(labels) {
            if y >= self.n_classes() {
                return Err(SimError::InvalidParameter(format!("label {y} out of range")));
            }
            if f.len() != self.dim {
                return Err(SimError::DimensionMismatch(format!(
                    "feature dim {} vs bank dim {}",
                    f.len(),
                    self.dim
                )));
            }
            self.counts[y] += 1;
            let n = self.counts[y] as f64;
            for d in 0..self.dim {
                let delta = f[d] - self.means[y][d];
                self.means[y][d] += delta / n;
                self.m2[y][d] += delta * (f[d] - self.means[y][d]);
            }
        }
        Ok(())
    }

    /// Population diagonal variance for a class; all-zero until 2 samples.
    pub fn variance(&self, class: usize) -> Vec<f64> {
        let n = self.counts[class];
        if n < 2 {
            return vec![0.0; self.dim];
        }
        self.m2[class].iter().map(|v| v / n as f64).collect()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class]
    }
}

/// Predicts per-class diagonal covariances from received features. A linear
/// map followed by elementwise squaring keeps the output nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePredictor {
    pub layer: Linear,
}

impl CovariancePredictor {
    pub fn seeded(dim: usize, rng: &mut Rng) -> Self {
        Self { layer: Linear::seeded(dim, dim, 0.05, rng) }
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.layer.forward(features).iter().map(|v| v * v).collect()
    }

    /// One SGD step regressing the prediction toward a target variance.
    pub fn regress_step(&mut self, features: &[f64], target: &[f64], lr: f64) {
        let pre = self.layer.forward(features);
        // L = mean_d (pre_d^2 - target_d)^2
        let dim = pre.len() as f64;
        // clipped per component: the loss is quartic in the pre-activation,
        // so raw gradients blow up on large features
        let dy: Vec<f64> = pre
            .iter()
            .zip(target)
            .map(|(p, t)| (2.0 * (p * p - t) * 2.0 * p / dim).clamp(-1.0, 1.0))
            .collect();
        self.layer.zero_grad();
        self.layer.backward(features, &dy);
        self.layer.step(lr, 0.0, 1);
    }
}

/// Per-sample augmentation covariance: empirical bank blended with the
/// predictor output.
pub fn blended_sigma(
    bank: &ClassCovarianceBank,
    predictor: Option<&CovariancePredictor>,
    features: &[f64],
    label: usize,
    blend: f64,
) -> Vec<f64> {
    let empirical = bank.variance(label);
    match predictor {
        None => empirical,
        Some(g) => {
            let predicted = g.predict(features);
            empirical.iter().zip(predicted).map(|(e, p)| (1.0 - blend) * e + blend * p).collect()
        }
    }
}

/// Gradients of the SA loss for one batch.
pub struct SaGrad {
    pub loss: f64,
    pub grad_w: Vec<Vec<f64>>,
    pub grad_b: Vec<f64>,
    pub grad_features: Vec<Vec<f64>>,
}

/// SA loss and gradients w.r.t. decoder weights, biases, and input features.
/// `sigmas[i]` is the augmentation covariance diagonal for sample i.
pub fn sa_loss_and_grad(
    features: &[Vec<f64>],
    labels: &[usize],
    sigmas: &[Vec<f64>],
    decoder: &Linear,
    lambda: f64,
) -> Result<SaGrad, SimError> {
    if lambda < 0.0 {
        return Err(SimError::InvalidParameter("lambda must be >= 0".into()));
    }
    if features.is_empty() || features.len() != labels.len() || features.len() != sigmas.len() {
        return Err(SimError::DimensionMismatch("features/labels/sigmas lengths".into()));
    }
    let c = decoder.out_dim();
    let a_dim = decoder.in_dim();
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![vec![0.0; a_dim]; c];
    let mut grad_b = vec![0.0; c];
    let mut grad_features = Vec::with_capacity(features.len());
    for ((a, &y), sigma) in features.iter().zip(labels).zip(sigmas) {
        if a.iter().any(|v| !v.is_finite()) || sigma.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidParameter("non-finite feature or covariance".into()));
        }
        let z = decoder.forward(a);
        let mut s = z.clone();
        if lambda > 0.0 {
            for j in 0..c {
                if j == y {
                    continue;
                }
                let q: f64 = (0..a_dim)
                    .map(|d| {
                        let dw = decoder.w[j][d] - decoder.w[y][d];
                        sigma[d] * dw * dw
                    })
                    .sum();
                s[j] += 0.5 * lambda * q;
            }
        }
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += (lse - z[y]) / n;
        let p = softmax(&s);
        let mut dfeat = vec![0.0; a_dim];
        for j in 0..c {
            let dz = (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
            grad_b[j] += dz;
            for d in 0..a_dim {
                grad_w[j][d] += dz * a[d];
                dfeat[d] += dz * decoder.w[j][d];
            }
        }
        if lambda > 0.0 {
            for j in 0..c {
                if j == y {
                    continue;
                }
                let scale = p[j] * lambda / n;
                for d in 0..a_dim {
                    let dw = decoder.w[j][d] - decoder.w[y][d];
                    grad_w[j][d] += scale * sigma[d] * dw;
                    grad_w[y][d] -= scale * sigma[d] * dw;
                }
            }
        }
        grad_features.push(dfeat);
    }
    if !loss.is_finite() {
        return Err(SimError::Diverged(format!("SA loss is non-finite: {loss}")));
    }
    Ok(SaGrad { loss, grad_w, grad_b, grad_features })
}

/// SA loss value only.
pub fn sa_loss(
    features: &[Vec<f64>],
    labels: &[usize],
    sigmas: &[Vec<f64>],
    decoder: &Linear,
    lambda: f64,
) -> Result<f64, SimError> {
    sa_loss_and_grad(features, labels, sigmas, decoder, lambda).map(|g| g.loss)
}

/// One receiver-side SA step: update the decoder (and optionally the
/// covariance predictor) from received features. Returns the batch loss.
pub fn sa_decoder_step(
    decoder: &mut Linear,
    predictor: Option<&mut CovariancePredictor>,
    bank: &mut ClassCovarianceBank,
    features: &[Vec<f64>],
    labels: &[usize],
    lambda: f64,
    blend: f64,
    lr: f64,
    momentum: f64,
) -> Result<f64, SimError> {
    bank.update(features, labels)?;
    let predictor_ref = predictor.as_deref();
    let sigmas: Vec<Vec<f64>> = features
        .iter()
        .zip(labels)
        .map(|(f, &y)| blended_sigma(bank, predictor_ref, f, y, blend))
        .collect();
    let grads = sa_loss_and_grad(features, labels, &sigmas, decoder, lambda)?;
    decoder.zero_grad();
    decoder.grad_w = grads.grad_w;
    decoder.grad_b = grads.grad_b;
    decoder.step(lr, momentum, 1);
    if !decoder.params_finite() {
        return Err(SimError::Diverged("decoder parameters are non-finite".into()));
    }
    if let Some(g) = predictor {
        for (f, &y) in features.iter().zip(labels) {
            let target = bank.variance(y);
            g.regress_step(f, &target, lr);
        }
        if !g.layer.params_finite() {
            return Err(SimError::Diverged("covariance predictor parameters are non-finite".into()));
        }
    }
    Ok(grads.loss)
}
