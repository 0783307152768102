use super::{check_grad_shape, missing_cache, relu_keeps, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Standalone ReLU. The classifier fuses ReLU into conv and dense layers;
/// this form exists for general composition and gradient checks.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<(Shape, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        Ok(input.clone())
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Train {
            let mask = x.data().iter().map(|&v| relu_keeps(v)).collect();
            self.cache = Some((x.shape().clone(), mask));
        }
        self.infer(x)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(|v| if v <= T::zero() { T::zero() } else { v }))
    }

    /// Subgradient at exactly zero is zero. NaN inputs pass through.
    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self.cache.take().ok_or_else(|| missing_cache("relu"))?;
        check_grad_shape("relu", grad_out.shape(), &shape)?;
        let data = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &keep)| if keep { g } else { T::zero() })
            .collect();
        Tensor::from_vec(shape.dims().to_vec(), data)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Row-wise softmax of `[N, K]` logits, stabilised by the row maximum.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.shape().matrix()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_vec(logits.dims().to_vec(), out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨p, g⟩)` per row.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_grad_shape("softmax", grad_out.shape(), probs.shape())?;
    let (_, k) = probs.shape().matrix()?;
    let mut out = Vec::with_capacity(probs.numel());
    for (p, g) in probs.data().chunks_exact(k).zip(grad_out.data().chunks_exact(k)) {
        let inner: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - inner)));
    }
    Tensor::from_vec(probs.dims().to_vec(), out)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "{} labels for {n} rows of logits",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Validation(format!(
            "label {l} of sample {i} is outside [0, {k})"
        )));
    }
    Ok(())
}

/// Per-sample `-log softmax(logits)[label]`, evaluated in `f64` via
/// log-sum-exp.
pub fn cross_entropy_per_sample<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<Vec<f64>> {
    let (n, k) = logits.shape().matrix()?;
    check_labels(labels, n, k)?;
    Ok(logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            max + sum.ln() - row[label].as_f64()
        })
        .collect())
}

/// Mean cross-entropy and the softmax probabilities it was computed from.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let losses = cross_entropy_per_sample(logits, labels)?;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((loss, softmax(logits)?))
}

/// Fused gradient of the mean cross-entropy w.r.t. logits:
/// `(probs − onehot) / N`.
pub fn softmax_cross_entropy_backward<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = probs.shape().matrix()?;
    check_labels(labels, n, k)?;
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grad = probs.data().to_vec();
    for (row, &label) in grad.chunks_exact_mut(k).zip(labels) {
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Tensor::from_vec(probs.dims().to_vec(), grad)
}
