use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax needs at least one logit".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = logits.iter().fold(logits[0], |a, &b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().map(|e| e.widen()).sum();
    Ok(exps.into_iter().map(|e| T::real(e.widen() / sum)).collect())
}

/// Cross-entropy of one sample against an integer class index.
///
/// Returns `(loss, probabilities, logit gradient)`. The loss is computed in
/// log-sum-exp form, `logsumexp(l) - l[label]`, so it stays finite for any
/// finite logits; the gradient is `probs - onehot(label)`.
pub fn softmax_cross_entropy_sample<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Shape(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let probs = softmax(logits)?;
    let max = logits.iter().fold(logits[0], |a, &b| if b > a { b } else { a });
    let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp().widen()).sum();
    let loss = max.widen() + sum_exp.ln() - logits[label].widen();
    let mut grad = probs.clone();
    grad[label] = grad[label] - T::one();
    Ok((T::real(loss), probs, grad))
}

/// Batched cross-entropy over `(batch, classes, 1, 1)` logits.
#[derive(Debug, Clone)]
pub struct CrossEntropyBatch<T> {
    /// Mean loss over the batch, accumulated at 64-bit.
    pub mean_loss: f64,
    /// Per-sample probabilities, same shape as the logits.
    pub probs: Tensor<T>,
    /// Gradient of the *mean* loss with respect to the logits
    /// (per-sample `probs - onehot`, scaled by `1 / batch`).
    pub logit_grad: Tensor<T>,
}

pub fn softmax_cross_entropy_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<CrossEntropyBatch<T>> {
    let [b, n, h, w] = logits.dims();
    if h != 1 || w != 1 {
        return Err(Error::Shape(format!("logits must be (batch, classes, 1, 1), got {:?}", logits.dims())));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut probs = Tensor::zeros(logits.dims());
    let mut grad = Tensor::zeros(logits.dims());
    let mut total = 0.0f64;
    let inv_b = T::real(1.0 / b as f64);
    for bi in 0..b {
        let row = &logits.values()[bi * n..(bi + 1) * n];
        let (loss, p, g) = softmax_cross_entropy_sample(row, labels[bi])?;
        total += loss.widen();
        probs.values_mut()[bi * n..(bi + 1) * n].copy_from_slice(&p);
        for (dst, gv) in grad.values_mut()[bi * n..(bi + 1) * n].iter_mut().zip(&g) {
            *dst = *gv * inv_b;
        }
    }
    Ok(CrossEntropyBatch { mean_loss: total / b as f64, probs, logit_grad: grad })
}
