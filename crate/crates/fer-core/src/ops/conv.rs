//! 2-D cross-correlation (the deep-learning "convolution", no kernel flip).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

pub fn conv2d_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kernel} exceeds padded input {padded}"),
        ));
    }
    let out = (padded - kernel) / stride + 1;
    if out == 0 {
        return Err(Error::shape("conv2d", "zero-size output".to_string()));
    }
    Ok(out)
}

pub fn conv2d_forward<E: Scalar>(
    input: &TensorBase<E>,
    weight: &TensorBase<E>,
    bias: &TensorBase<E>,
    stride: usize,
    padding: usize,
) -> Result<TensorBase<E>> {
    let (n, c_in, h, w) = input.dims4("conv2d")?;
    let (c_out, wc_in, kh, kw) = weight.dims4("conv2d")?;
    if wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c_in} channels, weight expects {wc_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?}, expected [{c_out}]", bias.shape()),
        ));
    }
    let oh = conv2d_output_dim(h, kh, stride, padding)?;
    let ow = conv2d_output_dim(w, kw, stride, padding)?;

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![E::zero(); n * c_out * oh * ow];

    for in_ in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Accumulate in f64, store f32.
                    let mut acc = b[co].into_f64();
                    for ci in 0..c_in {
                        let x_base = ((in_ * c_in + ci) * h) * w;
                        let w_base = ((co * c_in + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[x_base + iy as usize * w + ix as usize].into_f64();
                                let wv = wt[w_base + ky * kw + kx].into_f64();
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((in_ * c_out + co) * oh + oy) * ow + ox] = E::of_f64(acc);
                }
            }
        }
    }
    TensorBase::new(vec![n, c_out, oh, ow], out)
}

/// Gradients for input, weight and bias given the upstream gradient.
pub fn conv2d_backward<E: Scalar>(
    input: &TensorBase<E>,
    weight: &TensorBase<E>,
    stride: usize,
    padding: usize,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>, TensorBase<E>)> {
    let (n, c_in, h, w) = input.dims4("conv2d_backward")?;
    let (c_out, _, kh, kw) = weight.dims4("conv2d_backward")?;
    let (gn, gc, oh, ow) = grad_out.dims4("conv2d_backward")?;
    if gn != n || gc != c_out {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out shape {:?} inconsistent with input/weight", grad_out.shape()),
        ));
    }

    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gx = vec![0f64; x.len()];
    let mut gw = vec![0f64; wt.len()];
    let mut gb = vec![0f64; c_out];

    for in_ in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[((in_ * c_out + co) * oh + oy) * ow + ox].into_f64();
                    gb[co] += go;
                    for ci in 0..c_in {
                        let x_base = ((in_ * c_in + ci) * h) * w;
                        let w_base = ((co * c_in + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = x_base + iy as usize * w + ix as usize;
                                let wi = w_base + ky * kw + kx;
                                gx[xi] += wt[wi].into_f64() * go;
                                gw[wi] += x[xi].into_f64() * go;
                            }
                        }
                    }
                }
            }
        }
    }

    let gx = TensorBase::new(vec![n, c_in, h, w], gx.into_iter().map(E::of_f64).collect())?;
    let gw = TensorBase::new(vec![c_out, c_in, kh, kw], gw.into_iter().map(E::of_f64).collect())?;
    let gb = TensorBase::new(vec![c_out], gb.into_iter().map(E::of_f64).collect())?;
    Ok((gx, gw, gb))
}
