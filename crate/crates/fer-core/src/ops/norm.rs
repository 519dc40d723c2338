//! Batch normalization over [N, C, H, W], per-channel statistics.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

/// Saved by the training forward for the backward pass.
pub struct BnCache<E: Scalar> {
    pub xhat: TensorBase<E>,
    /// Per-channel sqrt(var + eps), in f64.
    pub inv_std: Vec<f64>,
}

/// Train-mode forward: normalize with batch statistics and update the running
/// estimates by exponential moving average.
pub fn batch_norm2d_train<E: Scalar>(
    input: &TensorBase<E>,
    gamma: &TensorBase<E>,
    beta: &TensorBase<E>,
    running_mean: &mut [E],
    running_var: &mut [E],
    eps: f64,
    momentum: f64,
) -> Result<(TensorBase<E>, BnCache<E>)> {
    let (n, c, h, w) = input.dims4("batch_norm2d")?;
    check_affine(gamma, beta, c)?;
    input.check_finite("batch_norm2d")?;
    let m = n * h * w;

    let x = input.data();
    let mut mean = vec![0f64; c];
    let mut var = vec![0f64; c];
    for ci in 0..c {
        let mut sum = 0f64;
        for_channel(n, c, h, w, ci, |i| sum += x[i].into_f64());
        mean[ci] = sum / m as f64;
        let mut sq = 0f64;
        for_channel(n, c, h, w, ci, |i| {
            let d = x[i].into_f64() - mean[ci];
            sq += d * d;
        });
        var[ci] = sq / m as f64;
    }

    // Running stats use the unbiased variance estimate when possible.
    for ci in 0..c {
        let unbiased = if m > 1 {
            var[ci] * m as f64 / (m - 1) as f64
        } else {
            var[ci]
        };
        let rm = running_mean[ci].into_f64() * (1.0 - momentum) + mean[ci] * momentum;
        let rv = running_var[ci].into_f64() * (1.0 - momentum) + unbiased * momentum;
        running_mean[ci] = E::of_f64(rm);
        running_var[ci] = E::of_f64(rv);
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![E::zero(); x.len()];
    let mut out = vec![E::zero(); x.len()];
    for ci in 0..c {
        let g = gamma.data()[ci].into_f64();
        let b = beta.data()[ci].into_f64();
        for_channel(n, c, h, w, ci, |i| {
            let xh = (x[i].into_f64() - mean[ci]) * inv_std[ci];
            xhat[i] = E::of_f64(xh);
            out[i] = E::of_f64(g * xh + b);
        });
    }

    let out = TensorBase::new(vec![n, c, h, w], out)?;
    let xhat = TensorBase::new(vec![n, c, h, w], xhat)?;
    Ok((out, BnCache { xhat, inv_std }))
}

/// Eval-mode forward: normalize with the running statistics.
pub fn batch_norm2d_eval<E: Scalar>(
    input: &TensorBase<E>,
    gamma: &TensorBase<E>,
    beta: &TensorBase<E>,
    running_mean: &[E],
    running_var: &[E],
    eps: f64,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = input.dims4("batch_norm2d")?;
    check_affine(gamma, beta, c)?;
    input.check_finite("batch_norm2d")?;

    let x = input.data();
    let mut out = vec![E::zero(); x.len()];
    for ci in 0..c {
        let g = gamma.data()[ci].into_f64();
        let b = beta.data()[ci].into_f64();
        let mu = running_mean[ci].into_f64();
        let inv = 1.0 / (running_var[ci].into_f64() + eps).sqrt();
        for_channel(n, c, h, w, ci, |i| {
            out[i] = E::of_f64(g * (x[i].into_f64() - mu) * inv + b);
        });
    }
    TensorBase::new(vec![n, c, h, w], out)
}

/// Backward through the train-mode normalization.
pub fn batch_norm2d_backward<E: Scalar>(
    cache: &BnCache<E>,
    gamma: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>, TensorBase<E>)> {
    let (n, c, h, w) = cache.xhat.dims4("batch_norm2d_backward")?;
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::shape(
            "batch_norm2d_backward",
            format!("grad shape {:?} vs {:?}", grad_out.shape(), cache.xhat.shape()),
        ));
    }
    let m = (n * h * w) as f64;
    let xhat = cache.xhat.data();
    let g = grad_out.data();

    let mut gx = vec![E::zero(); g.len()];
    let mut ggamma = vec![E::zero(); c];
    let mut gbeta = vec![E::zero(); c];
    for ci in 0..c {
        let mut sum_g = 0f64;
        let mut sum_gx = 0f64;
        for_channel(n, c, h, w, ci, |i| {
            let gi = g[i].into_f64();
            sum_g += gi;
            sum_gx += gi * xhat[i].into_f64();
        });
        ggamma[ci] = E::of_f64(sum_gx);
        gbeta[ci] = E::of_f64(sum_g);

        let scale = gamma.data()[ci].into_f64() * cache.inv_std[ci];
        for_channel(n, c, h, w, ci, |i| {
            let gi = g[i].into_f64();
            let xh = xhat[i].into_f64();
            gx[i] = E::of_f64(scale * (gi - sum_g / m - xh * sum_gx / m));
        });
    }

    Ok((
        TensorBase::new(vec![n, c, h, w], gx)?,
        TensorBase::new(vec![c], ggamma)?,
        TensorBase::new(vec![c], gbeta)?,
    ))
}

fn check_affine<E: Scalar>(gamma: &TensorBase<E>, beta: &TensorBase<E>, c: usize) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batch_norm2d",
            format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

#[inline]
fn for_channel(n: usize, c: usize, h: usize, w: usize, ci: usize, mut f: impl FnMut(usize)) {
    for in_ in 0..n {
        let base = (in_ * c + ci) * h * w;
        for i in base..base + h * w {
            f(i);
        }
    }
}
