//! Softmax cross-entropy with max-subtraction for stability.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

/// Returns the mean negative log-likelihood of the true classes and the
/// row-wise softmax probabilities.
pub fn softmax_cross_entropy<E: Scalar>(
    logits: &TensorBase<E>,
    labels: &[usize],
) -> Result<(E, TensorBase<E>)> {
    let (n, k) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} logit rows but {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }

    let x = logits.data();
    let mut probs = vec![E::zero(); n * k];
    let mut loss = 0f64;
    for row in 0..n {
        let r = &x[row * k..(row + 1) * k];
        let max = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.into_f64()));
        let mut denom = 0f64;
        for v in r {
            denom += (v.into_f64() - max).exp();
        }
        let log_denom = denom.ln();
        for (j, v) in r.iter().enumerate() {
            probs[row * k + j] = E::of_f64(((v.into_f64() - max) - log_denom).exp());
        }
        loss -= (x[row * k + labels[row]].into_f64() - max) - log_denom;
    }
    let probs = TensorBase::new(vec![n, k], probs)?;
    Ok((E::of_f64(loss / n as f64), probs))
}

/// Gradient on the logits: (p - onehot) / N.
pub fn softmax_cross_entropy_backward<E: Scalar>(
    probs: &TensorBase<E>,
    labels: &[usize],
) -> Result<TensorBase<E>> {
    let (n, k) = probs.dims2("softmax_cross_entropy_backward")?;
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![E::zero(); n * k];
    for row in 0..n {
        for j in 0..k {
            let p = probs.data()[row * k + j].into_f64();
            let y = if labels[row] == j { 1.0 } else { 0.0 };
            grad[row * k + j] = E::of_f64((p - y) * inv_n);
        }
    }
    TensorBase::new(vec![n, k], grad)
}
