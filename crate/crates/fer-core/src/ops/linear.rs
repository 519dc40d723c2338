//! Affine map and per-channel gating.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

/// out[n, o] = sum_i input[n, i] * weight[o, i] + bias[o]
pub fn linear_forward<E: Scalar>(
    input: &TensorBase<E>,
    weight: &TensorBase<E>,
    bias: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let (n, d_in) = input.dims2("linear")?;
    let (d_out, w_in) = weight.dims2("linear")?;
    if w_in != d_in {
        return Err(Error::shape(
            "linear",
            format!("input dim {d_in} vs weight dim {w_in}"),
        ));
    }
    if bias.shape() != [d_out] {
        return Err(Error::shape(
            "linear",
            format!("bias shape {:?}, expected [{d_out}]", bias.shape()),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![E::zero(); n * d_out];
    for in_ in 0..n {
        for o in 0..d_out {
            let mut acc = bias.data()[o].into_f64();
            for i in 0..d_in {
                acc += x[in_ * d_in + i].into_f64() * wt[o * d_in + i].into_f64();
            }
            out[in_ * d_out + o] = E::of_f64(acc);
        }
    }
    TensorBase::new(vec![n, d_out], out)
}

pub fn linear_backward<E: Scalar>(
    input: &TensorBase<E>,
    weight: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>, TensorBase<E>)> {
    let (n, d_in) = input.dims2("linear_backward")?;
    let (d_out, _) = weight.dims2("linear_backward")?;
    if grad_out.shape() != [n, d_out] {
        return Err(Error::shape(
            "linear_backward",
            format!("grad shape {:?}, expected [{n},{d_out}]", grad_out.shape()),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    let mut gx = vec![0f64; n * d_in];
    let mut gw = vec![0f64; d_out * d_in];
    let mut gb = vec![0f64; d_out];
    for in_ in 0..n {
        for o in 0..d_out {
            let go = g[in_ * d_out + o].into_f64();
            gb[o] += go;
            for i in 0..d_in {
                gx[in_ * d_in + i] += wt[o * d_in + i].into_f64() * go;
                gw[o * d_in + i] += x[in_ * d_in + i].into_f64() * go;
            }
        }
    }
    Ok((
        TensorBase::new(vec![n, d_in], gx.into_iter().map(E::of_f64).collect())?,
        TensorBase::new(vec![d_out, d_in], gw.into_iter().map(E::of_f64).collect())?,
        TensorBase::new(vec![d_out], gb.into_iter().map(E::of_f64).collect())?,
    ))
}

/// Scales each channel of `features` by its gate weight: the modulation step
/// of squeeze-and-excitation.
pub fn channel_scale_forward<E: Scalar>(
    features: &TensorBase<E>,
    weights: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = features.dims4("channel_scale")?;
    if weights.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "channel_scale",
            format!("weights shape {:?}, expected [{n},{c},1,1]", weights.shape()),
        ));
    }
    let x = features.data();
    let s = weights.data();
    let mut out = vec![E::zero(); x.len()];
    for nc in 0..n * c {
        let scale = s[nc];
        for i in nc * h * w..(nc + 1) * h * w {
            out[i] = x[i] * scale;
        }
    }
    TensorBase::new(vec![n, c, h, w], out)
}

/// Product rule: gradients for both the feature map and the gate weights.
pub fn channel_scale_backward<E: Scalar>(
    features: &TensorBase<E>,
    weights: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>)> {
    let (n, c, h, w) = features.dims4("channel_scale_backward")?;
    if grad_out.shape() != features.shape() {
        return Err(Error::shape(
            "channel_scale_backward",
            format!("grad shape {:?} vs {:?}", grad_out.shape(), features.shape()),
        ));
    }
    let x = features.data();
    let s = weights.data();
    let g = grad_out.data();
    let mut gx = vec![E::zero(); x.len()];
    let mut gs = vec![E::zero(); n * c];
    for nc in 0..n * c {
        let mut acc = 0f64;
        for i in nc * h * w..(nc + 1) * h * w {
            gx[i] = g[i] * s[nc];
            acc += g[i].into_f64() * x[i].into_f64();
        }
        gs[nc] = E::of_f64(acc);
    }
    Ok((
        TensorBase::new(vec![n, c, h, w], gx)?,
        TensorBase::new(vec![n, c, 1, 1], gs)?,
    ))
}
